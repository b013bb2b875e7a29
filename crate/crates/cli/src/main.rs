mod config;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wrfsplat::spectrum::Spectrum;
use wrfsplat::splat::{rasterize, RasterConfig};
use wrfsplat::tasks::{
    aoa_eval, median_abs_error, rssi_eval, train_rssi, write_aoa_csv, write_rssi_csv, RssiModel, RSSI_PRIMITIVES,
};
use wrfsplat::training::{evaluate, train, write_log_csv, write_metrics_csv, Checkpoint, LogRow, Model};
use wrfsplat::wavesim::{encode_samples, generate_dataset, Dataset, Sample, MANIFEST_FILE};
use wrfsplat::{training, WrfError};

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Exists(PathBuf),
    Hash(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Exists(_) => 3,
            CliError::Hash(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Hash(m) => f.write_str(m),
            CliError::Exists(p) => write!(f, "{} already exists; pass --force to overwrite", p.display()),
        }
    }
}

impl From<WrfError> for CliError {
    fn from(e: WrfError) -> Self {
        match e {
            WrfError::HashMismatch { .. } => CliError::Hash(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "wrfsplat", version, about = "Spatial-spectrum reconstruction with deformable 2D Gaussians")]
struct Cli {
    /// Worker threads; WRF_THREADS takes precedence. Defaults to the number
    /// of logical cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override such as `train.fine_iters=500`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a dataset.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory for manifest.json and spectra.bin.
        #[arg(long)]
        out: PathBuf,
    },
    /// Coarse then fine training.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Training log CSV; defaults to the checkpoint path with `.log.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        coarse_iters: Option<u64>,
        #[arg(long)]
        fine_iters: Option<u64>,
    },
    /// Render one spectrum.
    Render {
        #[arg(long)]
        model: PathBuf,
        /// Moving-node position `x,y,z` in meters.
        #[arg(long, value_parser = parse_position, allow_hyphen_values = true)]
        position: [f64; 3],
        /// Binary spectrum in the dataset sample layout.
        #[arg(long)]
        out: PathBuf,
        /// Also write an 8-bit max-normalized magnitude image.
        #[arg(long)]
        pgm: Option<PathBuf>,
    },
    /// Per-sample metrics on a dataset split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rendering throughput, single-threaded and multi-threaded.
    Bench {
        #[arg(long)]
        model: PathBuf,
        /// Renders per timed batch.
        #[arg(long, default_value_t = 100)]
        iters: usize,
    },
    /// RSSI regression head.
    Rssi {
        #[command(subcommand)]
        cmd: RssiCmd,
    },
    /// Spectrum-peak angle of arrival.
    Aoa {
        #[command(subcommand)]
        cmd: AoaCmd,
    },
}

#[derive(Subcommand)]
enum RssiCmd {
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum AoaCmd {
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_position(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got `{s}`"));
    }
    let mut p = [0.0; 3];
    for (v, t) in p.iter_mut().zip(parts) {
        *v = t.parse().map_err(|_| format!("`{t}` is not a number"))?;
    }
    Ok(p)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = setup_threads(cli.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(e.code());
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn setup_threads(flag: Option<usize>) -> Result<()> {
    let n = match std::env::var("WRF_THREADS") {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| CliError::Input(format!("WRF_THREADS=`{v}` is not a count")))?),
        Err(_) => flag,
    };
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn guard(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(CliError::Exists(path.to_path_buf()));
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::read(dir).map_err(|e| match e {
        WrfError::HashMismatch { .. } => CliError::Hash(format!("{}: {e}", dir.display())),
        e => CliError::Input(format!("{}: {e}", dir.display())),
    })
}

fn check_pair(ck: &Checkpoint, ds: &Dataset) -> Result<()> {
    let found = ds.manifest.hash();
    if ck.meta.manifest_hash != found {
        return Err(CliError::Hash(format!(
            "checkpoint was trained on manifest {}, dataset has {found}",
            ck.meta.manifest_hash
        )));
    }
    Ok(())
}

fn split_indices(ds: &Dataset, split: Split) -> Vec<usize> {
    match split {
        Split::Train => ds.manifest.train.clone(),
        Split::Test => ds.manifest.test.clone(),
        Split::All => (0..ds.samples.len()).collect(),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?))
}

fn run(cli: Cli) -> Result<()> {
    let force = cli.force;
    match cli.cmd {
        Cmd::Gen { cfg, out } => cmd_gen(&cfg, &out, force),
        Cmd::Train { cfg, data, out, log, resume, coarse_iters, fine_iters } => {
            cmd_train(&cfg, &data, &out, log, resume, coarse_iters, fine_iters, force)
        }
        Cmd::Render { model, position, out, pgm } => cmd_render(&model, position, &out, pgm.as_deref(), force),
        Cmd::Eval { model, data, split, out } => cmd_eval(&model, &data, split, &out, force),
        Cmd::Bench { model, iters } => cmd_bench(&model, iters),
        Cmd::Rssi { cmd: RssiCmd::Train { cfg, data, out } } => cmd_rssi_train(&cfg, &data, &out, force),
        Cmd::Rssi { cmd: RssiCmd::Eval { model, data, split, out } } => cmd_rssi_eval(&model, &data, split, &out, force),
        Cmd::Aoa { cmd: AoaCmd::Eval { model, data, split, out } } => cmd_aoa_eval(&model, &data, split, &out, force),
    }
}

fn cmd_gen(args: &ConfigArgs, out: &Path, force: bool) -> Result<()> {
    let cfg = config::load(args.config.as_deref(), &args.sets)?;
    guard(&out.join(MANIFEST_FILE), force)?;
    let scene = cfg.scene.build()?;
    let ds = generate_dataset(&scene, cfg.grid, &cfg.gen)?;
    ds.write(out)?;
    let m = &ds.manifest;
    println!("samples {}", m.sample_count);
    println!("excluded {}", m.excluded.len());
    println!("normalization {:e}", m.normalization);
    println!("split {} train / {} test", m.train.len(), m.test.len());
    Ok(())
}

fn log_printer(every: u64) -> impl FnMut(&LogRow) {
    let mut seen = 0u64;
    move |r: &LogRow| {
        seen += 1;
        if seen % every.max(1) == 0 {
            eprintln!("{} {} loss {:.5} (l1 {:.5}, ssim {:.5})", r.stage, r.iteration + 1, r.loss, r.l1_term, r.ssim_term);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    args: &ConfigArgs,
    data: &Path,
    out: &Path,
    log: Option<PathBuf>,
    resume: Option<PathBuf>,
    coarse: Option<u64>,
    fine: Option<u64>,
    force: bool,
) -> Result<()> {
    let mut cfg = config::load(args.config.as_deref(), &args.sets)?;
    if let Some(n) = coarse {
        cfg.train.coarse_iters = n;
    }
    if let Some(n) = fine {
        cfg.train.fine_iters = n;
    }
    let log_path = log.unwrap_or_else(|| out.with_extension("log.csv"));
    guard(out, force)?;
    guard(&log_path, force)?;
    let ds = load_dataset(data)?;
    let resume = resume.map(|p| load_checkpoint(&p)).transpose()?;

    let mut rows = Vec::new();
    let mut print = log_printer(10);
    let ck = train(&ds, &cfg.train, resume, &mut |r| {
        print(r);
        rows.push(*r);
    })?;
    ck.save(out)?;
    write_log_csv(create(&log_path)?, &rows)?;
    println!("iteration {}", ck.meta.iteration);
    report(&ck.model, &ds, &ds.manifest.test, "test", &ck.meta.config.raster())?;
    report(&ck.model, &ds, &ds.manifest.train, "train", &ck.meta.config.raster())?;
    Ok(())
}

fn report(model: &Model, ds: &Dataset, idx: &[usize], name: &str, raster: &RasterConfig) -> Result<()> {
    if idx.is_empty() {
        return Ok(());
    }
    let samples: Vec<(usize, &Sample)> = idx.iter().map(|&i| (i, &ds.samples[i])).collect();
    let a = evaluate(model, &samples, raster)?.aggregate;
    println!(
        "{name}: median PSNR {:.2} dB, median SSIM {:.4}, mean L1 {:.5} over {} samples",
        a.median_psnr, a.median_ssim, a.mean_l1, a.count
    );
    Ok(())
}

fn cmd_render(model: &Path, position: [f64; 3], out: &Path, pgm: Option<&Path>, force: bool) -> Result<()> {
    guard(out, force)?;
    if let Some(p) = pgm {
        guard(p, force)?;
    }
    let ck = load_checkpoint(model)?;
    if !ck.model.bounds.contains(position) {
        eprintln!("warning: {position:?} lies outside the training bounds; extrapolating");
    }
    let spec = ck.model.render(position, &ck.meta.config.raster())?;
    let sample = Sample { position: position.map(|v| v as f32), spectrum: spec };
    fs::write(out, encode_samples(std::slice::from_ref(&sample)))?;
    if let Some(p) = pgm {
        fs::write(p, pgm_bytes(&sample.spectrum))?;
    }
    Ok(())
}

/// Binary PGM, one pixel per cell, elevation row 0 first.
fn pgm_bytes(spec: &Spectrum<f32>) -> Vec<u8> {
    let g = spec.grid();
    let mag = spec.magnitude();
    let peak = mag.iter().copied().fold(0.0f32, f32::max);
    let mut out = format!("P5\n{} {}\n255\n", g.n_azimuth, g.n_elevation).into_bytes();
    out.extend(mag.iter().map(|m| if peak > 0.0 { (m / peak * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 }));
    out
}

fn cmd_eval(model: &Path, data: &Path, split: Split, out: &Path, force: bool) -> Result<()> {
    guard(out, force)?;
    let ck = load_checkpoint(model)?;
    let ds = load_dataset(data)?;
    check_pair(&ck, &ds)?;
    let idx = split_indices(&ds, split);
    let samples: Vec<(usize, &Sample)> = idx.iter().map(|&i| (i, &ds.samples[i])).collect();
    let ev = evaluate(&ck.model, &samples, &ck.meta.config.raster())?;
    write_metrics_csv(create(out)?, &ev.rows)?;
    let a = ev.aggregate;
    println!("median PSNR {:.2} dB", a.median_psnr);
    println!("median SSIM {:.4}", a.median_ssim);
    println!("mean L1 {:.5}", a.mean_l1);
    println!("samples {}", a.count);
    Ok(())
}

/// Median renders per second over five timed batches of `iters` renders.
fn throughput(iters: usize, mut render: impl FnMut()) -> f64 {
    render();
    let mut rates: Vec<f64> = (0..5)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..iters {
                render();
            }
            iters as f64 / t.elapsed().as_secs_f64()
        })
        .collect();
    rates.sort_by(f64::total_cmp);
    rates[2]
}

fn cmd_bench(model: &Path, iters: usize) -> Result<()> {
    if iters == 0 {
        return Err(CliError::Input("--iters must be at least 1".into()));
    }
    let ck = load_checkpoint(model)?;
    let raster = ck.meta.config.raster();
    let b = ck.model.bounds;
    let center = [0.5 * (b.min[0] + b.max[0]), 0.5 * (b.min[1] + b.max[1]), 0.5 * (b.min[2] + b.max[2])];
    let residuals = ck.model.residuals(center)?;
    let g = ck.model.set.grid;
    println!("grid {}x{}, {} primitives", g.n_elevation, g.n_azimuth, ck.model.set.len());

    let multi = rayon::current_num_threads();
    for (label, threads) in [("single", 1), ("multi", multi)] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
        let (raster_rate, full_rate) = pool.install(|| {
            let r = throughput(iters, || {
                rasterize(&ck.model.set, Some(&residuals), &raster).expect("validated checkpoint renders");
            });
            let f = throughput(iters.div_ceil(10), || {
                ck.model.render(center, &raster).expect("validated checkpoint renders");
            });
            (r, f)
        });
        println!("{label} ({threads} threads): rasterize {raster_rate:.1} renders/s, with deformation {full_rate:.1} renders/s");
    }
    Ok(())
}

fn cmd_rssi_train(args: &ConfigArgs, data: &Path, out: &Path, force: bool) -> Result<()> {
    let cfg = config::load(args.config.as_deref(), &args.sets)?;
    guard(out, force)?;
    let ds = load_dataset(data)?;
    let tc = training::TrainConfig { n_primitives: RSSI_PRIMITIVES, ..cfg.train };
    let mut print = log_printer(10);
    let ck = train_rssi(&ds, &tc, &mut print)?;
    ck.save(out)?;
    let cal = ck.meta.rssi.expect("rssi training stores a calibration");
    println!("calibration gain {:.4} dB, offset {:.4} dB", cal.gain_db, cal.offset_db);
    Ok(())
}

fn cmd_rssi_eval(model: &Path, data: &Path, split: Split, out: &Path, force: bool) -> Result<()> {
    guard(out, force)?;
    let ck = load_checkpoint(model)?;
    let ds = load_dataset(data)?;
    check_pair(&ck, &ds)?;
    let m = RssiModel::from_checkpoint(&ck)?;
    let rows = rssi_eval(&m, &ds, &split_indices(&ds, split))?;
    write_rssi_csv(create(out)?, &rows)?;
    println!("median |error| {:.3} dB over {} samples", median_abs_error(&rows), rows.len());
    Ok(())
}

fn cmd_aoa_eval(model: &Path, data: &Path, split: Split, out: &Path, force: bool) -> Result<()> {
    guard(out, force)?;
    let ck = load_checkpoint(model)?;
    let ds = load_dataset(data)?;
    check_pair(&ck, &ds)?;
    let samples: Vec<(usize, &Sample)> = split_indices(&ds, split).into_iter().map(|i| (i, &ds.samples[i])).collect();
    let rows = aoa_eval(&ck.model, &samples, &ck.meta.config.raster())?;
    write_aoa_csv(create(out)?, &rows)?;
    let errs: Vec<f64> = rows.iter().map(|r| r.err_cells).collect();
    println!("median peak error {:.3} cells over {} samples", training::median(&errs), rows.len());
    Ok(())
}
