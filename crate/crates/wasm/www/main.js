import init, { Demo, coord_kernel_mask } from "./pkg/dynseg_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function draw(canvas, width, height, rgba) {
  canvas.width = width;
  canvas.height = height;
  canvas.style.width = `${width * 2}px`;
  canvas.style.height = `${height * 2}px`;
  const image = new ImageData(new Uint8ClampedArray(rgba), width, height);
  canvas.getContext("2d").putImageData(image, 0, 0);
}

let demo = null;

function generate() {
  if (demo) demo.free();
  demo = new Demo(96, 128, num("instances"), num("duplicates"), $("rectangles").checked, BigInt(num("seed")));
  draw($("input"), demo.width(), demo.height(), demo.render_input());
  $("scene-info").textContent = `${demo.len()} masks`;
  suppress();
}

function suppress() {
  if (!demo) return;
  try {
    const t0 = performance.now();
    const json = demo.run($("method").value, $("decay").value === "linear", num("sigma"), num("iou"), num("score"), num("topk"));
    const ms = performance.now() - t0;
    const kept = JSON.parse(json).kept;
    draw($("output"), demo.width(), demo.height(), demo.render_result());
    $("nms-info").textContent = `${kept.length} of ${demo.len()} kept in ${ms.toFixed(2)} ms (including IoU matrix)`;
    $("json").textContent = JSON.stringify(kept, null, 1);
  } catch (err) {
    $("nms-info").textContent = `error: ${err}`;
  }
}

function kernel() {
  const size = 64;
  const [a, b, c, t] = [num("ka"), num("kb"), num("kc"), num("kt")];
  draw($("kernel"), size, size, coord_kernel_mask(size, a, b, c, t));
  $("kernel").style.width = $("kernel").style.height = "256px";
  $("kernel-info").textContent = `foreground where sigmoid(${a}·x + ${b}·y + ${c}) ≥ ${t}`;
}

await init();
$("generate").addEventListener("click", generate);
for (const id of ["method", "decay", "sigma", "iou", "score", "topk"]) $(id).addEventListener("input", suppress);
for (const id of ["ka", "kb", "kc", "kt"]) $(id).addEventListener("input", kernel);
generate();
kernel();
