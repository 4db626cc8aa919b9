//! `prmr`: file-based driver for phantoms, projection, k-space simulation,
//! reconstruction, training and evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use prmr::baselines::{focuss_reconstruct, tv_reconstruct, ReconTrace};
use prmr::eval::{run_adaptation_study, run_matrix, Reconstructor};
use prmr::fbp::{fbp, fbp_magnitude};
use prmr::image::Image;
use prmr::io::pgm::auto_window;
use prmr::io::{export_pgm, load_config, read_container, write_container, Container, PipelineConfig};
use prmr::kspace::{add_noise, default_pad_length, measured_sinogram, sinogram_to_kspace, RadialKSpace};
use prmr::network::{predict, NetworkParams};
use prmr::phantom::PhantomFamily;
use prmr::projection::{default_num_bins, make_schedule, radon_forward, ScheduleMode, Sinogram};
use prmr::train::{build_training_set, finetune_checked, intensity_scale, normalize_pairs, pretrain, TrainConfig};
use prmr::{Error, Result};

#[derive(Parser)]
#[command(name = "prmr", version, about = "Sparse-view radial reconstruction toolkit")]
struct Cli {
    /// JSON configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for phantoms, noise and training (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Leave wall-clock columns out of CSV files so reruns are byte-identical.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize phantom slices.
    Phantom {
        #[arg(long)]
        family: Option<String>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        start: usize,
    },
    /// Radon transform of an image container.
    Project {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 120)]
        views: usize,
        #[arg(long, default_value = "uniform")]
        schedule: String,
    },
    /// Radial k-space from a sinogram container, optionally with noise.
    Kspace {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        pad: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
    /// Reconstruct from a k-space or sinogram container.
    Recon(ReconArgs),
    /// Train a network.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Run an evaluation.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Write an image container as a 16-bit PGM.
    Export {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
        window: Option<Vec<f64>>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Fbp,
    Tv,
    Focuss,
    Net,
}

#[derive(Args)]
struct ReconArgs {
    #[arg(value_enum)]
    method: Method,
    #[arg(long)]
    input: PathBuf,
    /// Network manifest, for `net`.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Output image side; defaults to the configured size.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Subcommand)]
enum TrainCommand {
    /// Train from scratch on the configured family.
    Pretrain,
    /// Fine-tune a network on a few slices of the configured family.
    Finetune {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        slices: Option<usize>,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Method × view-count NMSE matrix on held-out slices.
    Matrix {
        /// Comma-separated subset of fbp,tv,focuss,net.
        #[arg(long, default_value = "fbp,tv,focuss")]
        methods: String,
        #[arg(long)]
        network: Option<PathBuf>,
        /// Skip the PGM dumps.
        #[arg(long)]
        no_images: bool,
    },
    /// Source → target adaptation study.
    Adapt {
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        target: Option<String>,
    },
}

/// Slices used for evaluation start here, clear of any training range.
const HELD_OUT_START: usize = 10_000;

struct Ctx {
    cfg: PipelineConfig,
    seed: u64,
    deterministic: bool,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn train_cfg(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..base.clone()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => PipelineConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.pretrain.seed);
    if cli.seed.is_some() {
        cfg.geometry.noise_seed = seed;
        cfg.adapt_study.geometry.noise_seed = seed;
        cfg.adapt_study.seeds = vec![seed];
    }
    fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    let ctx = Ctx {
        cfg,
        seed,
        deterministic: cli.deterministic,
        out: cli.out,
    };
    match cli.command {
        Command::Phantom { family, count, start } => cmd_phantom(&ctx, family, count, start),
        Command::Project { input, views, schedule } => cmd_project(&ctx, &input, views, &schedule),
        Command::Kspace { input, pad, noise } => cmd_kspace(&ctx, &input, pad, noise),
        Command::Recon(args) => cmd_recon(&ctx, &args),
        Command::Train(TrainCommand::Pretrain) => cmd_pretrain(&ctx),
        Command::Train(TrainCommand::Finetune { network, slices }) => cmd_finetune(&ctx, &network, slices),
        Command::Eval(EvalCommand::Matrix {
            methods,
            network,
            no_images,
        }) => cmd_matrix(&ctx, &methods, network.as_deref(), no_images),
        Command::Eval(EvalCommand::Adapt { source, target }) => cmd_adapt(&ctx, source, target),
        Command::Export { input, window } => cmd_export(&ctx, &input, window),
    }
}

fn family(ctx: &Ctx, name: Option<String>) -> Result<PhantomFamily> {
    name.map_or(Ok(ctx.cfg.family), |n| PhantomFamily::parse(&n))
}

fn write_image(ctx: &Ctx, stem: &str, img: &Image) -> Result<()> {
    write_container(&ctx.path(&format!("{stem}.prmr")), &Container::from_image(img))?;
    export_pgm(img, &ctx.path(&format!("{stem}.pgm")), auto_window(img))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_phantom(ctx: &Ctx, family_name: Option<String>, count: usize, start: usize) -> Result<()> {
    let fam = family(ctx, family_name)?;
    let images = fam.images(ctx.seed, start, count, ctx.cfg.size)?;
    for (i, img) in images.iter().enumerate() {
        write_image(ctx, &format!("phantom_{}", start + i), img)?;
    }
    eprintln!("wrote {count} {} phantom(s) to {}", fam.name(), ctx.out.display());
    Ok(())
}

fn cmd_project(ctx: &Ctx, input: &Path, views: usize, schedule: &str) -> Result<()> {
    let img = read_container(input)?.to_image()?;
    let sched = make_schedule(ScheduleMode::parse(schedule)?, views)?;
    let sino = radon_forward(&img, &sched, default_num_bins(img.height().max(img.width())))?;
    write_container(&ctx.path("sinogram.prmr"), &Container::from_sinogram(&sino))
}

fn cmd_kspace(ctx: &Ctx, input: &Path, pad: Option<usize>, noise: f64) -> Result<()> {
    let sino = read_container(input)?.to_sinogram()?;
    let mut k = sinogram_to_kspace(&sino, pad.unwrap_or_else(|| default_pad_length(sino.num_bins)))?;
    if noise > 0.0 {
        k = add_noise(&k, noise, ctx.seed)?;
    }
    write_container(&ctx.path("kspace.prmr"), &Container::from_kspace(&k))
}

/// A container as measurements: k-space directly, or a sinogram in the
/// projector's layout.
enum Measured {
    KSpace(RadialKSpace),
    Sinogram(Sinogram),
}

impl Measured {
    fn load(path: &Path) -> Result<Self> {
        let c = read_container(path)?;
        match c.meta_str("kind") {
            Some("kspace") => Ok(Measured::KSpace(c.to_kspace()?)),
            Some("sinogram") => Ok(Measured::Sinogram(c.to_sinogram()?)),
            other => Err(Error::Format(format!(
                "{} holds {}, expected k-space or a sinogram",
                path.display(),
                other.unwrap_or("untyped data")
            ))),
        }
    }

    fn fbp(&self, size: usize, ctx: &Ctx) -> Result<Image> {
        match self {
            Measured::KSpace(k) => fbp_magnitude(k, size, ctx.cfg.geometry.window),
            Measured::Sinogram(s) => fbp(s, size, ctx.cfg.geometry.window),
        }
    }

    fn sinogram(&self) -> Result<Sinogram> {
        match self {
            Measured::KSpace(k) => measured_sinogram(k),
            Measured::Sinogram(s) => Ok(s.clone()),
        }
    }
}

fn write_trace(ctx: &Ctx, name: &str, trace: &ReconTrace) -> Result<()> {
    trace.write_csv(&ctx.path(name))?;
    if trace.cg_warnings() > 0 {
        eprintln!(
            "warning: {} inner CG solve(s) stopped at the iteration cap (see {name})",
            trace.cg_warnings()
        );
    }
    Ok(())
}

fn cmd_recon(ctx: &Ctx, args: &ReconArgs) -> Result<()> {
    let data = Measured::load(&args.input)?;
    let size = args.size.unwrap_or(ctx.cfg.size);
    let t = Instant::now();
    let (stem, img) = match args.method {
        Method::Fbp => ("recon_fbp", data.fbp(size, ctx)?),
        Method::Tv => {
            let (img, trace) = tv_reconstruct(&data.sinogram()?, size, &ctx.cfg.tv)?;
            write_trace(ctx, "tv_trace.csv", &trace)?;
            ("recon_tv", img)
        }
        Method::Focuss => {
            let (img, trace) = focuss_reconstruct(&data.sinogram()?, size, &ctx.cfg.focuss)?;
            write_trace(ctx, "focuss_trace.csv", &trace)?;
            ("recon_focuss", img)
        }
        Method::Net => {
            let path = args
                .network
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("recon net needs --network".into()))?;
            let net = NetworkParams::load(path)?;
            ("recon_net", predict(&net, &data.fbp(size, ctx)?)?)
        }
    };
    if !ctx.deterministic {
        eprintln!("{stem}: {:.3} s", t.elapsed().as_secs_f64());
    }
    write_image(ctx, stem, &img)
}

fn cmd_pretrain(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.train_cfg(&ctx.cfg.pretrain);
    let c = &ctx.cfg;
    let slices = c.family.images(ctx.seed, 0, c.slices, c.size)?;
    let held_out = c.family.images(ctx.seed, HELD_OUT_START, 2, c.size)?;
    let pairs = build_training_set(&slices, &cfg.view_set, &c.geometry)?;
    let val = build_training_set(&held_out, &cfg.view_set, &c.geometry)?;
    let scale = intensity_scale(&pairs, cfg.label_peak)?;
    let (mut net, trace) = pretrain(
        &normalize_pairs(&pairs, scale),
        &normalize_pairs(&val, scale),
        &c.arch,
        &cfg,
    )?;
    net.intensity_scale = scale;
    net.save(&ctx.path("network.json"))?;
    trace.write_csv(&ctx.path("pretrain_trace.csv"))?;
    if let Some(last) = trace.last() {
        eprintln!(
            "pretrain: final train loss {:.4e}, val loss {:.4e}",
            last.train_loss, last.val_loss
        );
    }
    Ok(())
}

fn cmd_finetune(ctx: &Ctx, network: &Path, slices: Option<usize>) -> Result<()> {
    let pre = NetworkParams::load(network)?;
    let c = &ctx.cfg;
    let mut adapt = c.finetune.clone();
    adapt.train = ctx.train_cfg(&adapt.train);
    if let Some(s) = slices {
        adapt.num_target_slices = s;
    }
    let views = &adapt.train.view_set;
    let target = c.family.images(ctx.seed, 0, adapt.num_target_slices, c.size)?;
    let held_out = c.family.images(ctx.seed, HELD_OUT_START, 2, c.size)?;
    let s = pre.intensity_scale;
    let pairs = normalize_pairs(&build_training_set(&target, views, &c.geometry)?, s);
    let val = normalize_pairs(&build_training_set(&held_out, views, &c.geometry)?, s);
    let (net, trace) = finetune_checked(&pre, &pre.arch, &pairs, &val, &adapt)?;
    net.save(&ctx.path("finetuned.json"))?;
    trace.write_csv(&ctx.path("finetune_trace.csv"))
}

fn cmd_matrix(ctx: &Ctx, methods: &str, network: Option<&Path>, no_images: bool) -> Result<()> {
    let c = &ctx.cfg;
    let net = network.map(NetworkParams::load).transpose()?;
    let mut list = Vec::new();
    for name in methods.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let r = match name {
            "fbp" => Reconstructor::Fbp,
            "tv" => Reconstructor::Tv(c.tv.clone()),
            "focuss" => Reconstructor::Focuss(c.focuss.clone()),
            "net" => Reconstructor::Net(
                net.as_ref()
                    .ok_or_else(|| Error::InvalidArgument("method 'net' needs --network".into()))?,
            ),
            other => return Err(Error::InvalidArgument(format!("unknown method '{other}'"))),
        };
        list.push((name.to_string(), r));
    }
    let phantoms = c.family.images(ctx.seed, HELD_OUT_START, c.slices, c.size)?;
    let dump = ctx.path("images");
    if !no_images {
        fs::create_dir_all(&dump).map_err(|e| Error::io(&dump, e))?;
    }
    let m = run_matrix(
        &list,
        &c.eval_views,
        &phantoms,
        &c.geometry,
        (!no_images).then_some(dump.as_path()),
    )?;
    write_text(&ctx.path("matrix.csv"), &m.to_csv(!ctx.deterministic))
}

fn cmd_adapt(ctx: &Ctx, source: Option<String>, target: Option<String>) -> Result<()> {
    let mut cfg = ctx.cfg.adapt_study.clone();
    if let Some(s) = source {
        cfg.source = PhantomFamily::parse(&s)?;
    }
    if let Some(t) = target {
        cfg.target = PhantomFamily::parse(&t)?;
    }
    let study = run_adaptation_study(&cfg)?;
    let name = format!("adapt_{}_{}.csv", cfg.source.name(), cfg.target.name());
    write_text(&ctx.path(&name), &study.to_csv())?;
    for (m, s) in [("fbp", 0), ("unadapted", 0)] {
        if let Some(v) = study.mean_nmse(m, s) {
            eprintln!("{m:>10}      nmse {v:.5}");
        }
    }
    for &s in &cfg.s_values {
        if let Some(v) = study.mean_nmse("adapted", s) {
            eprintln!("{:>10} s={s:<3} nmse {v:.5}", "adapted");
        }
    }
    for &s in &cfg.scratch_s_values {
        if let Some(v) = study.mean_nmse("scratch", s) {
            eprintln!("{:>10} s={s:<3} nmse {v:.5}", "scratch");
        }
    }
    Ok(())
}

fn cmd_export(ctx: &Ctx, input: &Path, window: Option<Vec<f64>>) -> Result<()> {
    let img = read_container(input)?.to_image()?;
    let w = match window.as_deref() {
        Some([lo, hi]) => (*lo, *hi),
        _ => auto_window(&img),
    };
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    export_pgm(&img, &ctx.path(&format!("{stem}.pgm")), w)
}
