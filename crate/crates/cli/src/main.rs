use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dynseg_core::bench::{format_table, run_bench};
use dynseg_core::head::{
    assemble_masks, finish_instances, fuse_pyramid, AssembleConfig, CategoryGrid, FeatureMap, KernelGrid,
};
use dynseg_core::io::{MaskSet, ResultDoc, Tensor};
use dynseg_core::scene::{gen_scene, PipelineScene, PipelineSceneSpec, SceneSpec, ShapeKind};
use dynseg_core::verify::{run_all, VerifyOptions};
use dynseg_core::{suppress, DecayFn, Method, ScoredMask, SuppressionConfig};

const EXIT_VERIFY: u8 = 1;
const EXIT_INPUT: u8 = 2;

#[derive(Parser)]
#[command(name = "dynseg", version, about = "Instance-mask suppression and dynamic mask heads")]
struct Cli {
    /// Worker threads for the parallel kernels (defaults to all cores).
    #[arg(long, global = true, env = "DYNSEG_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic duplicate-cluster scene as mask-set JSON.
    Gen {
        #[command(flatten)]
        scene: SceneArgs,
        /// Write to this file instead of standard output.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Suppress duplicates in a mask-set file.
    Suppress {
        input: PathBuf,
        #[command(flatten)]
        nms: NmsArgs,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Time every suppression method on a scene.
    Bench {
        #[command(flatten)]
        scene: SceneArgs,
        /// Benchmark this mask-set file instead of a generated scene.
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        nms: NmsArgs,
        /// Methods to time; all of them when omitted.
        #[arg(long = "methods", value_delimiter = ',')]
        methods: Vec<MethodArg>,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Run every reference check.
    Verify {
        /// Random inputs per check.
        #[arg(long, default_value_t = 200)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the dynamic head end to end and print the surviving instances.
    Pipeline {
        #[command(flatten)]
        pipe: PipelineArgs,
        #[command(flatten)]
        nms: NmsArgs,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Hard,
    Soft,
    Fast,
    Matrix,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Hard => Method::Hard,
            MethodArg::Soft => Method::Soft,
            MethodArg::Fast => Method::Fast,
            MethodArg::Matrix => Method::Matrix,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DecayArg {
    Linear,
    Gauss,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ShapeArg {
    Rectangle,
    Ellipse,
}

#[derive(Args)]
struct SceneArgs {
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 10)]
    instances: usize,
    /// Jittered copies per instance.
    #[arg(long, default_value_t = 4)]
    duplicates: usize,
    #[arg(long, value_enum, default_value_t = ShapeArg::Ellipse)]
    shape: ShapeArg,
    #[arg(long, default_value_t = 0.05)]
    score_noise: f64,
    #[arg(long, default_value_t = 1)]
    categories: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SceneArgs {
    fn spec(&self) -> SceneSpec {
        SceneSpec {
            height: self.height,
            width: self.width,
            num_instances: self.instances,
            num_duplicates: self.duplicates,
            shape: match self.shape {
                ShapeArg::Rectangle => ShapeKind::Rectangle,
                ShapeArg::Ellipse => ShapeKind::Ellipse,
            },
            score_noise: self.score_noise,
            num_categories: self.categories,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct NmsArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Matrix)]
    method: MethodArg,
    #[arg(long, value_enum, default_value_t = DecayArg::Gauss)]
    decay: DecayArg,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    iou_threshold: f64,
    #[arg(long, default_value_t = 0.05)]
    score_threshold: f64,
    #[arg(long, default_value_t = 100)]
    top_k: usize,
    /// Suppress across categories.
    #[arg(long)]
    class_agnostic: bool,
}

impl NmsArgs {
    fn config(&self) -> anyhow::Result<SuppressionConfig> {
        let config = SuppressionConfig {
            method: self.method.into(),
            decay: match self.decay {
                DecayArg::Linear => DecayFn::Linear,
                DecayArg::Gauss => DecayFn::Gaussian { sigma: self.sigma },
            },
            iou_threshold: self.iou_threshold,
            score_threshold: self.score_threshold,
            top_k: self.top_k,
            class_agnostic: self.class_agnostic,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct PipelineArgs {
    /// Category-grid tensor file; requires --kernels and --feature.
    #[arg(long, requires_all = ["kernels", "feature"])]
    category: Option<PathBuf>,
    /// Kernel-grid tensor file.
    #[arg(long)]
    kernels: Option<PathBuf>,
    /// Fused mask-feature tensor file.
    #[arg(long)]
    feature: Option<PathBuf>,
    /// Seed for the generated head inputs when no files are given.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 12)]
    grid_size: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 4)]
    objects: usize,
    /// Use 3x3 dynamic kernels instead of 1x1.
    #[arg(long)]
    kernel_3x3: bool,
    /// Write the category, kernel and fused feature tensors into this directory.
    #[arg(long)]
    save_tensors: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    confidence_threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    mask_threshold: f64,
}

/// Failure of a reference check, as opposed to bad input.
#[derive(Debug)]
struct VerificationFailed(String);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for VerificationFailed {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let verification = err.chain().any(|e| {
                e.is::<VerificationFailed>()
                    || matches!(e.downcast_ref::<dynseg_core::Error>(), Some(dynseg_core::Error::Verification(_)))
            });
            ExitCode::from(if verification { EXIT_VERIFY } else { EXIT_INPUT })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Gen { scene, output } => {
            let spec = scene.spec();
            let masks = gen_scene(&spec)?;
            let json = MaskSet::from_masks(spec.height, spec.width, &masks)?.to_json();
            match output {
                Some(path) => fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?,
                None => writeln!(out, "{json}")?,
            }
        }
        Command::Suppress { input, nms, format } => {
            let config = nms.config()?;
            let masks = read_mask_set(&input)?;
            let result = suppress(&masks, &config)?;
            let doc = ResultDoc::from_result(&masks, &result);
            write_doc(&mut out, &doc, format)?;
        }
        Command::Bench { scene, input, nms, methods, repeats, format } => {
            let config = SuppressionConfig { class_agnostic: true, ..nms.config()? };
            let masks = match input {
                Some(path) => read_mask_set(&path)?,
                None => gen_scene(&scene.spec())?,
            };
            let methods: Vec<Method> = if methods.is_empty() {
                Method::ALL.to_vec()
            } else {
                methods.into_iter().map(Method::from).collect()
            };
            let reports = run_bench(&masks, &methods, repeats, &config)?;
            match format {
                Format::Table => write!(out, "{}", format_table(&reports))?,
                Format::Json => writeln!(out, "{}", serde_json::to_string(&reports)?)?,
            }
        }
        Command::Verify { scenes, seed } => {
            let outcomes = run_all(&VerifyOptions { scenes, seed });
            let mut failed = 0;
            for o in &outcomes {
                writeln!(out, "{} {:<18} {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail)?;
                failed += usize::from(!o.passed);
            }
            if failed > 0 {
                return Err(VerificationFailed(format!("{failed} of {} checks failed", outcomes.len())).into());
            }
        }
        Command::Pipeline { pipe, nms, format } => {
            let config = nms.config()?;
            let (category, kernels, feature) = pipeline_inputs(&pipe)?;
            if let Some(dir) = &pipe.save_tensors {
                save_tensors(dir, &category, &kernels, &feature)?;
            }
            let assemble = AssembleConfig {
                confidence_threshold: pipe.confidence_threshold,
                mask_threshold: pipe.mask_threshold,
            };
            let masks = assemble_masks(&category, &kernels, &feature, &assemble)?;
            let instances = finish_instances(&masks, &config)?;
            write_doc(&mut out, &ResultDoc::from_instances(&instances), format)?;
        }
    }
    Ok(())
}

fn read_mask_set(path: &Path) -> anyhow::Result<Vec<ScoredMask>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let set = MaskSet::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    set.to_masks().with_context(|| format!("decoding {}", path.display()))
}

fn read_tensor(path: &Path) -> anyhow::Result<Tensor> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Tensor::read(BufReader::new(file)).with_context(|| format!("reading tensor {}", path.display()))
}

fn pipeline_inputs(pipe: &PipelineArgs) -> anyhow::Result<(CategoryGrid, KernelGrid, FeatureMap)> {
    if let (Some(c), Some(k), Some(f)) = (&pipe.category, &pipe.kernels, &pipe.feature) {
        let feature = read_tensor(f)?.into_feature_map()?;
        let kernels = read_tensor(k)?.into_kernel_grid(feature.channels())?;
        let category = read_tensor(c)?.into_category_grid()?;
        return Ok((category, kernels, feature));
    }
    let spec = PipelineSceneSpec {
        height: pipe.size,
        width: pipe.size,
        grid_size: pipe.grid_size,
        num_objects: pipe.objects,
        kernel_3x3: pipe.kernel_3x3,
        seed: pipe.seed,
        ..Default::default()
    };
    let scene = PipelineScene::seeded(&spec)?;
    let feature = fuse_pyramid(&scene.pyramid)?;
    Ok((scene.category, scene.kernels, feature))
}

fn save_tensors(dir: &Path, category: &CategoryGrid, kernels: &KernelGrid, feature: &FeatureMap) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, tensor) in [
        ("category.tensor", Tensor::from_category(category)),
        ("kernels.tensor", Tensor::from_kernels(kernels)),
        ("feature.tensor", Tensor::from_feature(feature)),
    ] {
        let path = dir.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = io::BufWriter::new(file);
        tensor.write(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn write_doc(out: &mut impl Write, doc: &ResultDoc, format: Format) -> anyhow::Result<()> {
    match format {
        Format::Json => writeln!(out, "{}", doc.to_json())?,
        Format::Table => {
            writeln!(out, "{:>6} {:>10} {:>9}  box", "index", "score", "category")?;
            for k in &doc.kept {
                let bbox = k.bbox.map_or_else(|| "-".to_string(), |b| format!("{b:?}"));
                writeln!(out, "{:>6} {:>10.6} {:>9}  {bbox}", k.index, k.score, k.category)?;
            }
        }
    }
    Ok(())
}
