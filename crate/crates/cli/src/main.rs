//! `roadpainter`: synthesize scenes, render BEV features, run the pipeline,
//! evaluate, visualize and self-check.
//!
//! `ROADPAINTER_SEED` overrides the configured seed (and the `synth` seed when
//! `--seed` is absent). `ROADPAINTER_OUT_DIR` prefixes relative output paths.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use roadpainter::io::{read_bev, write_bev, WeightsFile};
use roadpainter::loss::{analytic_grad_check, GradTerm};
use roadpainter::pipeline::{
    ablation_grid, format_ablation, oracle_weights, render_for, run_pipeline, PipelineConfig, PipelineWeights,
    PredictionFile, Toggles,
};
use roadpainter::scene::{synth_scene, Scene, SynthParams};
use roadpainter::svg::{render_svg, DrawnLane};

const SEED_ENV: &str = "ROADPAINTER_SEED";
const OUT_DIR_ENV: &str = "ROADPAINTER_OUT_DIR";
/// Tolerance for `gradcheck`.
const GRAD_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "roadpainter",
    version,
    about = "Lane-centerline detection and topology pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene.
    Synth(SynthArgs),
    /// Render the BEV feature container for a scene.
    RenderBev(RenderArgs),
    /// Write randomly initialised (or oracle) weights.
    InitWeights(InitArgs),
    /// Run the pipeline on a scene and write predictions.
    Run(RunArgs),
    /// Re-evaluate a prediction file against a scene.
    Eval(EvalArgs),
    /// Draw a scene and optional predictions as SVG.
    Viz(VizArgs),
    /// Compare analytic loss gradients with finite differences.
    Gradcheck(GradArgs),
    /// Run end-to-end sanity checks.
    Selftest,
    /// Run every PGM/PMF/SD toggle combination on one scene.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Only straight roads with this many lanes and no intersections.
    #[arg(long)]
    straight: Option<usize>,
    #[arg(long)]
    roads: Option<usize>,
    #[arg(long)]
    intersections: Option<usize>,
}

#[derive(Args)]
struct ConfigArg {
    /// PipelineConfig JSON; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Gaussian noise std; defaults to the configured value.
    #[arg(long)]
    noise: Option<f64>,
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InitArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Fit oracle weights to this scene instead of random ones.
    #[arg(long)]
    oracle: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn apply(s: Option<Switch>, flag: &mut bool) {
        if let Some(s) = s {
            *flag = matches!(s, Switch::On);
        }
    }
}

#[derive(Args)]
struct ToggleArgs {
    /// Points-guided masks; a bare flag means `on`.
    #[arg(long, value_enum, num_args = 0..=1, default_missing_value = "on")]
    toggle_pgm: Option<Switch>,
    /// Points-mask fusion; a bare flag means `on`.
    #[arg(long, value_enum, num_args = 0..=1, default_missing_value = "on")]
    toggle_pmf: Option<Switch>,
    /// SD map interaction; a bare flag means `on`.
    #[arg(long, value_enum, num_args = 0..=1, default_missing_value = "on")]
    toggle_sd: Option<Switch>,
    /// Plain self-attention instead of real/virtual separation.
    #[arg(long)]
    no_rvs: bool,
    /// Drop masked cross-attention from the decoder.
    #[arg(long)]
    no_hybrid: bool,
}

impl ToggleArgs {
    fn apply(&self, t: &mut Toggles) {
        Switch::apply(self.toggle_pgm, &mut t.pgm);
        Switch::apply(self.toggle_pmf, &mut t.pmf);
        Switch::apply(self.toggle_sd, &mut t.sd);
        t.rvs &= !self.no_rvs;
        t.hybrid &= !self.no_hybrid;
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scene: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    toggles: ToggleArgs,
    /// Weights file; random weights from the configured seed otherwise.
    #[arg(long, conflicts_with = "oracle")]
    weights: Option<PathBuf>,
    /// Use oracle weights fitted to the scene (needs `--no-hybrid`).
    #[arg(long)]
    oracle: bool,
    /// BEV container to use instead of rendering the scene.
    #[arg(long)]
    bev: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VizArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradArgs {
    /// Random points per loss term.
    #[arg(long, default_value_t = 50)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Text table destination; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the rows as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(
            v.trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={v:?} is not a u64"))?,
        )),
        Err(_) => Ok(None),
    }
}

fn out_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if p.is_relative() => Path::new(&dir).join(p),
        _ => p.to_path_buf(),
    }
}

fn write_out(p: &Path, bytes: &[u8]) -> Result<PathBuf> {
    let p = out_path(p);
    if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
    Ok(p)
}

fn read_text(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn load_scene(p: &Path) -> Result<Scene> {
    Scene::from_json(&read_text(p)?).with_context(|| format!("parsing scene {}", p.display()))
}

fn load_config(arg: &ConfigArg) -> Result<PipelineConfig> {
    let mut cfg = match &arg.config {
        Some(p) => serde_json::from_str(&read_text(p)?).with_context(|| format!("parsing config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_weights(cfg: &PipelineConfig, p: Option<&Path>) -> Result<PipelineWeights> {
    match p {
        Some(p) => {
            let file: WeightsFile =
                serde_json::from_str(&read_text(p)?).with_context(|| format!("parsing weights {}", p.display()))?;
            Ok(PipelineWeights::from_file(cfg, &file)?)
        }
        None => Ok(PipelineWeights::init(cfg)?),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let mut params = match a.straight {
        Some(n) => SynthParams::straight(n),
        None => SynthParams::default(),
    };
    if let Some(r) = a.roads {
        params.roads = r;
    }
    if let Some(i) = a.intersections {
        params.intersections = i;
    }
    let scene = synth_scene(seed, &params)?;
    let p = write_out(&a.out, scene.to_json()?.as_bytes())?;
    eprintln!(
        "wrote {} ({} centerlines, {} edges)",
        p.display(),
        scene.len(),
        scene.edges().len()
    );
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let mut cfg = load_config(&a.config)?;
    if let Some(n) = a.noise {
        cfg.noise_sigma = n;
    }
    cfg.validate()?;
    let bev = render_for(&scene, &cfg)?;
    let mut buf = Vec::new();
    write_bev(&bev, &mut buf)?;
    let p = write_out(&a.out, &buf)?;
    eprintln!(
        "wrote {} ({}x{}x{})",
        p.display(),
        bev.height(),
        bev.width(),
        bev.channels
    );
    Ok(())
}

fn init_weights(a: InitArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let w = match &a.oracle {
        Some(s) => oracle_weights(&cfg, &load_scene(s)?)?,
        None => PipelineWeights::init(&cfg)?,
    };
    let p = write_out(&a.out, serde_json::to_string(&w.to_file())?.as_bytes())?;
    eprintln!("wrote {}", p.display());
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let mut cfg = load_config(&a.config)?;
    a.toggles.apply(&mut cfg.toggles);
    cfg.validate()?;
    let weights = if a.oracle {
        oracle_weights(&cfg, &scene)?
    } else {
        load_weights(&cfg, a.weights.as_deref())?
    };
    let bev = match &a.bev {
        Some(p) => {
            let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Some(read_bev(&cfg.grid, std::io::BufReader::new(f))?)
        }
        None => None,
    };
    let out = run_pipeline(&scene, &cfg, &weights, bev.as_ref())?;
    let file = out.to_file(&cfg);
    let p = write_out(&a.out, file.to_json()?.as_bytes())?;
    let r = &file.report;
    eprintln!(
        "wrote {}: DET_l {:.4}  TOP_ll {:.4}  AP_l {:.4}",
        p.display(),
        r.det_l,
        r.top_ll,
        r.ap_l
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let pred =
        PredictionFile::from_json(&read_text(&a.pred)?).with_context(|| format!("parsing {}", a.pred.display()))?;
    let scene = load_scene(&a.gt)?;
    let cfg = load_config(&a.config)?;
    let report = pred.evaluate(&scene, &cfg.metrics)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(o) => {
            write_out(o, json.as_bytes())?;
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn viz(a: VizArgs) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let pred = match &a.pred {
        Some(p) => Some(PredictionFile::from_json(&read_text(p)?)?),
        None => None,
    };
    let drawn: Vec<DrawnLane> = pred
        .iter()
        .flat_map(|f| &f.lanes)
        .map(|l| DrawnLane {
            points: &l.points,
            score: l.score,
        })
        .collect();
    write_out(&a.out, render_svg(&scene, &drawn).as_bytes())?;
    Ok(())
}

/// Worst relative error per term over `points` random points.
fn gradient_errors(points: usize, seed: u64) -> Vec<(GradTerm, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GradTerm::ALL
        .iter()
        .map(|&t| {
            let worst = (0..points)
                .map(|_| {
                    let (x, target) = t.sample(&mut rng);
                    analytic_grad_check(t, &x, &target)
                })
                .fold(0.0, f64::max);
            (t, worst)
        })
        .collect()
}

fn gradcheck(a: GradArgs) -> Result<bool> {
    let mut ok = true;
    for (t, err) in gradient_errors(a.points, a.seed) {
        let pass = err < GRAD_TOL;
        ok &= pass;
        println!(
            "{:<12} max rel err {err:.3e}  {}",
            t.name(),
            if pass { "ok" } else { "FAIL" }
        );
    }
    Ok(ok)
}

fn selftest() -> Result<bool> {
    let mut ok = true;
    let mut check = |name: &str, pass: bool, detail: String| {
        ok &= pass;
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    };

    let worst = gradient_errors(10, 1).into_iter().map(|(_, e)| e).fold(0.0, f64::max);
    check("gradients", worst < GRAD_TOL, format!("max rel err {worst:.2e}"));

    let scene = synth_scene(7, &SynthParams::default())?;
    let valid = scene.validate().is_ok() && Scene::from_json(&scene.to_json()?)? == scene;
    check(
        "scene",
        valid,
        format!("{} centerlines, {} edges", scene.len(), scene.edges().len()),
    );

    let cfg = PipelineConfig {
        toggles: Toggles {
            pgm: false,
            pmf: false,
            sd: true,
            hybrid: false,
            rvs: true,
        },
        ..PipelineConfig::default()
    };
    let straight = synth_scene(7, &SynthParams::straight(3))?;
    let out = run_pipeline(&straight, &cfg, &oracle_weights(&cfg, &straight)?, None)?;
    check(
        "oracle run",
        out.report.det_l == 1.0 && out.report.top_ll == 1.0,
        format!("DET_l {:.4} TOP_ll {:.4}", out.report.det_l, out.report.top_ll),
    );

    let cfg = PipelineConfig::default();
    let weights = PipelineWeights::init(&cfg)?;
    let a = run_pipeline(&scene, &cfg, &weights, None)?.to_file(&cfg).to_json()?;
    let b = run_pipeline(&scene, &cfg, &weights, None)?.to_file(&cfg).to_json()?;
    check("determinism", a == b, format!("{} bytes", a.len()));
    Ok(ok)
}

fn ablate(a: AblateArgs) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let cfg = load_config(&a.config)?;
    let weights = load_weights(&cfg, a.weights.as_deref())?;
    let rows = ablation_grid(&scene, &cfg, &weights)?;
    let table = format_ablation(&rows);
    match &a.out {
        Some(o) => {
            write_out(o, table.as_bytes())?;
        }
        None => print!("{table}"),
    }
    if let Some(j) = &a.json {
        write_out(j, serde_json::to_string_pretty(&rows)?.as_bytes())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a).map(|_| true),
        Command::RenderBev(a) => render(a).map(|_| true),
        Command::InitWeights(a) => init_weights(a).map(|_| true),
        Command::Run(a) => run(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Viz(a) => viz(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Selftest => selftest(),
        Command::Ablate(a) => ablate(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
