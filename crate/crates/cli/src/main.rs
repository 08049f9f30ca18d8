//! `loopforge`: slicing, dataset generation, training, decoding and export.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical-health abort.

use clap::{Args, Parser, Subcommand, ValueEnum};
use loopforge_core::geometry::{read_obj, slice_mesh, DEFAULT_CHAIN_TOL};
use loopforge_core::recon::{export_ply, oriented_cloud, CloudParams};
use loopforge_core::sequence::{encode_sequence, read_loopseq_file, write_loopseq_file};
use loopforge_core::synthetic::{build_dataset, load_dataset, normalize_mesh, DatasetConfig};
use loopforge_core::{Axis, PlaneList};
use loopforge_model::check::{gradcheck_loss, LossCheck};
use loopforge_model::decode::{decode, interpolate, sample};
use loopforge_model::{
    load_checkpoint, train, DecodeSession, EditScript, Model, ModelConfig, ModelError, StopRule,
    TrainOptions,
};
use serde_json::json;
use std::fmt::Display;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "loopforge", version, about = "Loop-sequence shape modelling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Slice an OBJ mesh into a loop sequence.
    Slice(SliceArgs),
    /// Generate a procedural (or OBJ-backed) dataset directory.
    Dataset(DatasetArgs),
    /// Train a model on a dataset directory; NDJSON epoch log on stdout.
    Train(TrainArgs),
    /// Finite-difference check of the full loss gradient.
    Gradcheck(GradcheckArgs),
    /// Decode a latent drawn from N(0, I) with a seed.
    Sample(SampleArgs),
    /// Encode a sequence to its posterior mean.
    Encode(EncodeArgs),
    /// Decode k evenly spaced latents between two codes.
    Interpolate(InterpolateArgs),
    /// Decode a latent while applying an edit script.
    Edit(EditArgs),
    /// Write the oriented point cloud of a sequence as ASCII PLY.
    ExportPly(ExportArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    X,
    Y,
    Z,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::X => Axis::X,
            AxisArg::Y => Axis::Y,
            AxisArg::Z => Axis::Z,
        }
    }
}

#[derive(Args)]
struct SliceArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    planes: usize,
    #[arg(long, value_enum, default_value = "y")]
    axis: AxisArg,
    /// Plane offsets `lo,hi`; defaults to bin centres of [0, 1].
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    range: Option<[f64; 2]>,
    /// Points per loop after resampling.
    #[arg(long = "points", default_value_t = 32)]
    n_points: usize,
    /// Scale the mesh into the unit cube before slicing.
    #[arg(long)]
    normalize: bool,
    #[arg(long, default_value_t = DEFAULT_CHAIN_TOL)]
    chain_tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Category {
    Vase,
    Sofa,
}

#[derive(Args)]
struct DatasetArgs {
    /// Dataset config JSON. Without it, `--category` defaults apply.
    #[arg(long, conflicts_with = "category")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    category: Option<Category>,
    #[arg(long)]
    num_shapes: Option<usize>,
    #[arg(long)]
    plane_count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Small model sized for a laptop CPU; planes follow the dataset.
    Desk,
    Tiny,
    FullVase,
    FullSofa,
}

#[derive(Args)]
struct ModelSource {
    /// Model config JSON.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    model: ModelSource,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the epoch count implied by the learning-rate schedule.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Also checkpoint every this many epochs.
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    model: ModelSource,
    #[arg(long)]
    probes: Option<usize>,
    /// Length T of the random input sequence.
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    h: Option<f64>,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

#[derive(Args)]
struct StopArgs {
    /// Stop after this many level-up flags (defaults to the model's plane count).
    #[arg(long, conflicts_with = "eos")]
    plane_count: Option<usize>,
    /// Stop at an end-of-sequence token within this tolerance of zero.
    #[arg(long, num_args = 0..=1, default_missing_value = "0.01")]
    eos: Option<f64>,
}

impl StopArgs {
    fn rule(&self, model: &Model) -> StopRule {
        match (self.plane_count, self.eos) {
            (Some(k), _) => StopRule::PlaneCount(k),
            (None, Some(eps)) => StopRule::EosToken(eps),
            (None, None) => DecodeSession::default_stop(model),
        }
    }
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    stop: StopArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    loopseq: PathBuf,
    /// Where to write the posterior mean as a JSON array.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InterpolateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// JSON array file with the first latent code.
    #[arg(long)]
    za: PathBuf,
    #[arg(long)]
    zb: PathBuf,
    #[arg(short, long)]
    k: usize,
    #[command(flatten)]
    stop: StopArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EditArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// JSON array file with the latent code.
    #[arg(long, conflicts_with = "seed", required_unless_present = "seed")]
    z: Option<PathBuf>,
    /// Draw the latent from N(0, I) instead, as `sample` does.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    script: PathBuf,
    #[command(flatten)]
    stop: StopArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    loopseq: PathBuf,
    /// Cap samples per unit area; 0 disables cap filling.
    #[arg(long, default_value_t = 2000.0)]
    density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "LOOPFORGE_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Sessions kept before the least recently used is dropped.
    #[arg(long, default_value_t = loopforge_service::DEFAULT_SESSION_CAP)]
    session_cap: usize,
    /// Checkpoints to load at startup.
    #[arg(long)]
    ckpt: Vec<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn data(e: impl Display) -> Self {
        Self::Data(e.to_string())
    }

    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numerical(_) => 3,
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite { .. } => Self::Numerical(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn parse_range(s: &str) -> Result<[f64; 2], String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `lo,hi`, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok([parse(lo)?, parse(hi)?])
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Slice(a) => slice(a),
        Command::Dataset(a) => dataset(a),
        Command::Train(a) => train_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Sample(a) => sample_cmd(a),
        Command::Encode(a) => encode(a),
        Command::Interpolate(a) => interpolate_cmd(a),
        Command::Edit(a) => edit(a),
        Command::ExportPly(a) => export(a),
        Command::Serve(a) => serve(a),
    }
}

/// One JSON summary line on stdout.
fn report(v: serde_json::Value) {
    println!("{v}");
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> CliResult<Arc<Model>> {
    load_checkpoint(path)
        .map(Arc::new)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn read_latent(path: &Path, model: &Model) -> CliResult<Vec<f64>> {
    let z: Vec<f64> = read_json(path)?;
    let n_z = model.config().latent_dim;
    if z.len() != n_z {
        return Err(Failure::Data(format!(
            "{}: latent has length {}, model expects {n_z}",
            path.display(),
            z.len()
        )));
    }
    Ok(z)
}

fn slice(a: SliceArgs) -> CliResult {
    if a.planes < 2 {
        return Err(Failure::Usage("--planes must be at least 2".into()));
    }
    let axis = Axis::from(a.axis);
    let [lo, hi] = a
        .range
        .unwrap_or(loopforge_core::PlaneSchedule::centered(axis, a.planes).range);
    let planes = PlaneList::along_axis(axis, a.planes, lo, hi).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut mesh = read_obj(&a.mesh).map_err(Failure::data)?;
    if a.normalize {
        mesh = normalize_mesh(&mesh).map_err(Failure::data)?;
    }
    let per_plane = slice_mesh(&mesh, &planes, a.chain_tol, a.n_points).map_err(Failure::data)?;
    if let Some(missed) = per_plane.iter().position(Vec::is_empty) {
        return Err(Failure::Data(format!("plane {missed} does not intersect the mesh")));
    }
    let seq = encode_sequence(&per_plane, axis, &planes).map_err(Failure::data)?;
    write_loopseq_file(&seq, &a.out).map_err(Failure::data)?;
    report(json!({
        "out": a.out,
        "tokens": seq.len(),
        "loops_per_plane": per_plane.iter().map(Vec::len).collect::<Vec<_>>(),
    }));
    Ok(())
}

fn dataset(a: DatasetArgs) -> CliResult {
    let mut cfg = match (&a.config, a.category) {
        (Some(path), _) => read_json::<DatasetConfig>(path)?,
        (None, Some(Category::Sofa)) => DatasetConfig::sofa(64, 0),
        (None, _) => DatasetConfig::vase(64, 0),
    };
    if let Some(n) = a.num_shapes {
        cfg.num_shapes = n;
    }
    if let Some(p) = a.plane_count {
        cfg = cfg.with_planes(p);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let (_, manifest) = build_dataset(&cfg, &a.out).map_err(Failure::data)?;
    for r in &manifest.rejected {
        eprintln!("rejected {}: {}", r.id, r.reason);
    }
    report(json!({
        "out": a.out,
        "shapes": manifest.ids.len(),
        "rejected": manifest.rejected.len(),
        "stats": manifest.stats,
    }));
    Ok(())
}

fn model_config(src: &ModelSource, planes: Option<loopforge_core::PlaneSchedule>) -> CliResult<ModelConfig> {
    let cfg = match (&src.config, src.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            ModelConfig::from_json(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?
        }
        (None, Some(Preset::Desk)) => ModelConfig::desk(
            planes.unwrap_or(loopforge_core::PlaneSchedule::centered(Axis::Y, 16)),
        ),
        (None, Some(Preset::Tiny)) => ModelConfig::tiny(),
        (None, Some(Preset::FullVase)) => ModelConfig::full_vase(),
        (None, Some(Preset::FullSofa)) => ModelConfig::full_sofa(),
        (None, None) => return Err(Failure::Usage("one of --config or --preset is required".into())),
    };
    cfg.validate().map_err(Failure::data)?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> CliResult {
    let (manifest, seqs) = load_dataset(&a.dataset).map_err(Failure::data)?;
    let mut cfg = model_config(&a.model, Some(manifest.config.schedule()))?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    cfg.validate().map_err(Failure::data)?;
    let opts = TrainOptions {
        epochs: a.epochs,
        checkpoint: Some(a.out.clone()),
        checkpoint_every: a.checkpoint_every,
    };
    let stdout = std::io::stdout();
    let (model, logs) = train(&seqs, &cfg, &opts, |log| {
        let mut out = stdout.lock();
        let _ = writeln!(out, "{}", serde_json::to_string(log).expect("log serializes"));
        let _ = out.flush();
    })?;
    eprintln!(
        "trained {} epochs ({} steps) on {} sequences; checkpoint {}",
        logs.len(),
        model.step,
        seqs.len(),
        a.out.display()
    );
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CliResult {
    let cfg = model_config(&a.model, None)?;
    let defaults = LossCheck::default();
    let check = LossCheck {
        length: a.length.unwrap_or(defaults.length),
        probes: a.probes.unwrap_or(defaults.probes),
        seed: a.seed.unwrap_or(defaults.seed),
        h: a.h.unwrap_or(defaults.h),
        ..defaults
    };
    let r = gradcheck_loss(&cfg, &check)?;
    report(json!({
        "max_rel_error": r.max_rel_error,
        "probes": r.probes.len(),
        "skipped": r.skipped,
        "tolerance": a.tolerance,
        "pass": r.max_rel_error <= a.tolerance,
    }));
    if r.max_rel_error.is_nan() || r.max_rel_error > a.tolerance {
        return Err(Failure::Numerical(format!(
            "max relative error {:e} exceeds {:e}",
            r.max_rel_error, a.tolerance
        )));
    }
    Ok(())
}

fn sample_cmd(a: SampleArgs) -> CliResult {
    let model = load_model(&a.ckpt)?;
    let stop = a.stop.rule(&model);
    let (seq, status) = sample(model, a.seed, stop)?;
    write_loopseq_file(&seq, &a.out).map_err(Failure::data)?;
    report(json!({ "out": a.out, "tokens": seq.len(), "status": status }));
    Ok(())
}

fn encode(a: EncodeArgs) -> CliResult {
    let model = load_model(&a.ckpt)?;
    let seq = read_loopseq_file(&a.loopseq).map_err(Failure::data)?;
    model.check_sequence(&seq)?;
    let post = model.encode(&seq.tokens)?;
    let text = serde_json::to_string(&post.mu).map_err(Failure::data)?;
    std::fs::write(&a.out, text + "\n").map_err(Failure::data)?;
    report(json!({ "out": a.out, "latent_dim": post.mu.len() }));
    Ok(())
}

fn interpolate_cmd(a: InterpolateArgs) -> CliResult {
    let model = load_model(&a.ckpt)?;
    let za = read_latent(&a.za, &model)?;
    let zb = read_latent(&a.zb, &model)?;
    let zs = interpolate(&za, &zb, a.k).map_err(|e| Failure::Usage(e.to_string()))?;
    let stop = a.stop.rule(&model);
    std::fs::create_dir_all(&a.out).map_err(Failure::data)?;
    let mut files = Vec::new();
    for (i, z) in zs.into_iter().enumerate() {
        let (seq, status) = decode(Arc::clone(&model), z, stop, None)?;
        let path = a.out.join(format!("interp-{i:03}.loopseq"));
        write_loopseq_file(&seq, &path).map_err(Failure::data)?;
        files.push(json!({ "path": path, "tokens": seq.len(), "status": status }));
    }
    report(json!({ "out": a.out, "sequences": files }));
    Ok(())
}

fn edit(a: EditArgs) -> CliResult {
    let model = load_model(&a.ckpt)?;
    let text = std::fs::read_to_string(&a.script)
        .map_err(|e| Failure::Data(format!("{}: {e}", a.script.display())))?;
    let script =
        EditScript::from_json(&text).map_err(|e| Failure::Data(format!("{}: {e}", a.script.display())))?;
    let stop = a.stop.rule(&model);
    let mut session = match (&a.z, a.seed) {
        (Some(path), _) => {
            let z = read_latent(path, &model)?;
            DecodeSession::new(model, z, stop)?
        }
        (None, Some(seed)) => DecodeSession::sampled(model, seed, stop)?,
        (None, None) => return Err(Failure::Usage("one of --z or --seed is required".into())),
    };
    session.apply_script(&script)?;
    let status = session.run()?;
    let seq = session.sequence()?;
    write_loopseq_file(&seq, &a.out).map_err(Failure::data)?;
    report(json!({
        "out": a.out,
        "tokens": seq.len(),
        "status": status,
        "edits_applied": session.applied_edits().len(),
    }));
    Ok(())
}

fn export(a: ExportArgs) -> CliResult {
    if !(a.density.is_finite() && a.density >= 0.0) {
        return Err(Failure::Usage("--density must be a non-negative number".into()));
    }
    let seq = read_loopseq_file(&a.loopseq).map_err(Failure::data)?;
    let params = CloudParams {
        cap_density: a.density,
        seed: a.seed,
        ..Default::default()
    };
    let cloud = oriented_cloud(&seq, params).map_err(Failure::data)?;
    export_ply(&cloud, &a.out).map_err(Failure::data)?;
    report(json!({ "out": a.out, "points": cloud.len() }));
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult {
    let store = Arc::new(loopforge_service::Store::new(a.session_cap));
    for path in &a.ckpt {
        let model = load_model(path)?;
        let id = store.add_model(loopforge_service::LoadedModel {
            model,
            checkpoint_path: path.to_string_lossy().into_owned(),
        });
        eprintln!("loaded {} as {id}", path.display());
    }
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Runtime::new().map_err(Failure::data)?;
    eprintln!("listening on http://{addr}");
    rt.block_on(loopforge_service::serve(addr, store))
        .map_err(|e| Failure::Data(format!("{addr}: {e}")))
}
