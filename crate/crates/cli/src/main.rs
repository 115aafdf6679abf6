use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use erpnerf::dataset::render_dataset;
use erpnerf::field::RadianceField;
use erpnerf::io::{self, Precision, RunConfig, RunLayout};
use erpnerf::metrics::{evaluate_view, mean_metrics, BANDS};
use erpnerf::scene::ScenePreset;
use erpnerf::trainer::{render_view, train, EvalHook, TrainSummary};
use erpnerf::Error;

/// Radiance fields from equirectangular 360-degree images.
#[derive(Debug, Parser)]
#[command(name = "erpnerf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset from an analytic scene.
    Gen(GenArgs),
    /// Train coarse and fine fields on a dataset.
    Train(TrainArgs),
    /// Score a trained run on the dataset's test views.
    Eval(EvalArgs),
    /// Export a sampling-probability heatmap from a run's sampler snapshot.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl From<Switch> for bool {
    fn from(s: Switch) -> bool {
        s == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Size {
    width: usize,
    height: usize,
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH, e.g. 128x64")?;
        let parse = |v: &str| v.parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
        let size = Size {
            width: parse(w)?,
            height: parse(h)?,
        };
        if size.width == 0 || size.height == 0 {
            return Err("image size must be nonzero".into());
        }
        Ok(size)
    }
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Scene preset: toy, fog or empty.
    #[arg(long, default_value = "toy")]
    scene: ScenePreset,
    /// Number of training views.
    #[arg(long, default_value_t = 5)]
    train: usize,
    /// Number of test views.
    #[arg(long, default_value_t = 4)]
    test: usize,
    /// Image size as WxH.
    #[arg(long, default_value = "128x64")]
    size: Size,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory.
    #[arg(long, default_value = "dataset")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long, default_value = "dataset")]
    data: PathBuf,
    /// Run directory to create.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
    /// JSON run configuration; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training iterations [default: 5000].
    #[arg(long)]
    iters: Option<usize>,
    /// Rays per iteration [default: 2048].
    #[arg(long)]
    rays: Option<usize>,
    /// Distortion-aware sampling [default: on].
    #[arg(long)]
    distortion: Option<Switch>,
    /// Content-aware sampling [default: on].
    #[arg(long)]
    content: Option<Switch>,
    /// Seed for initialization, pixel draws and depth jitter [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate every this many iterations; 0 only at start and end [default: 500].
    #[arg(long)]
    eval_every: Option<usize>,
    /// Initial learning rate [default: 5e-4].
    #[arg(long)]
    lr_start: Option<f64>,
    /// Final learning rate [default: 5e-5].
    #[arg(long)]
    lr_end: Option<f64>,
    /// Coarse samples per ray [default: 64].
    #[arg(long)]
    n_coarse: Option<usize>,
    /// Fine samples per ray [default: 64].
    #[arg(long)]
    n_fine: Option<usize>,
    /// Hidden layers in the position trunk [default: 4].
    #[arg(long)]
    net_depth: Option<usize>,
    /// Width of the position trunk [default: 64].
    #[arg(long)]
    net_width: Option<usize>,
    /// Position encoding octaves [default: 6].
    #[arg(long)]
    pos_octaves: Option<usize>,
    /// Direction encoding octaves [default: 2].
    #[arg(long)]
    dir_octaves: Option<usize>,
    /// Field arithmetic precision [default: f32].
    #[arg(long)]
    precision: Option<Precision>,
    /// Rays per forward/backward chunk [default: 512].
    #[arg(long)]
    chunk_rays: Option<usize>,
    /// Write 0 instead of elapsed time to the wall_ms column.
    #[arg(long)]
    no_wall_time: bool,
    /// Print each evaluation to stderr.
    #[arg(long)]
    verbose: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, default_value = "runs/default")]
    run: PathBuf,
    #[arg(long, default_value = "dataset")]
    data: PathBuf,
    /// Also report per-latitude-band PSNR.
    #[arg(long)]
    bands: bool,
    /// Also report high- and low-frequency crop PSNR.
    #[arg(long)]
    crops: bool,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    #[arg(long, default_value = "runs/default")]
    run: PathBuf,
    /// Iteration of the snapshot (an evaluation boundary).
    #[arg(long, default_value_t = 0)]
    iter: usize,
    /// Training image index.
    #[arg(long, default_value_t = 0)]
    image: usize,
    #[arg(long, default_value = "heatmap.png")]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}

fn gen(a: &GenArgs) -> erpnerf::Result<()> {
    let scene = a.scene.build();
    let ds = render_dataset(&scene, a.train, a.test, a.size.width, a.size.height, a.seed)?;
    io::save_dataset(&a.out, &ds)?;
    println!(
        "wrote {} train and {} test views to {}",
        ds.train.len(),
        ds.test.len(),
        a.out.display()
    );
    Ok(())
}

fn run_config(a: &TrainArgs) -> erpnerf::Result<RunConfig> {
    let mut c = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident),*) => {$(if let Some(v) = a.$flag { c.$flag = v.into(); })*};
    }
    set!(iters, rays, distortion, content, seed, eval_every, lr_start, lr_end);
    set!(n_coarse, n_fine, net_depth, net_width, pos_octaves, dir_octaves, chunk_rays);
    if let Some(p) = a.precision {
        c.precision = p;
    }
    if a.no_wall_time {
        c.log_wall_time = false;
    }
    c.validate()?;
    Ok(c)
}

fn train_cmd(a: &TrainArgs) -> erpnerf::Result<()> {
    let cfg = run_config(a)?;
    let ds = io::load_dataset(&a.data)?;
    let layout = RunLayout::new(&a.out);
    layout.create_dirs()?;
    cfg.save(&layout.config())?;
    let mut print = |it: usize, m: &erpnerf::metrics::ViewMetrics| {
        eprintln!("iter {it:>6}  psnr {:6.2}  ssim {:.4}", m.psnr, m.ssim);
    };
    let hook: Option<&mut EvalHook> = if a.verbose { Some(&mut print) } else { None };
    let (t, r, f, out) = (cfg.train(), cfg.render(), cfg.field(), Some(a.out.as_path()));
    let summary: TrainSummary = match cfg.precision {
        Precision::F32 => train::<f32>(t, r, f, &ds, out, hook)?,
        Precision::F64 => train::<f64>(t, r, f, &ds, out, hook)?,
    };
    println!(
        "trained {} iterations in {:.1} s: test PSNR {:.2} -> {:.2} dB, SSIM {:.4}",
        cfg.iters,
        summary.wall_ms as f64 / 1000.0,
        summary.initial.psnr,
        summary.last.psnr,
        summary.last.ssim
    );
    Ok(())
}

fn write_text(path: &Path, text: &str) -> erpnerf::Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn eval_cmd(a: &EvalArgs) -> erpnerf::Result<()> {
    let layout = RunLayout::new(&a.run);
    let cfg = RunConfig::load(&layout.config())?;
    let ck = io::load_checkpoint(&layout.checkpoint())?;
    let ds = io::load_dataset(&a.data)?;
    let render = cfg.render();
    let (coarse, fine): (&RadianceField<f64>, _) = (&ck.coarse, &ck.fine);

    let mut summary = String::from("view,psnr,ssim\n");
    let mut bands = String::from("view,psnr_band1,psnr_band2,psnr_band3,psnr_band4,psnr_band5\n");
    let mut crops = String::from("view,low_crop_psnr,high_crop_psnr\n");
    let mut all = Vec::with_capacity(ds.test.len());
    for v in &ds.test {
        let img = render_view(coarse, fine, &v.pose, v.image.width(), v.image.height(), v.t_far, &render)?;
        let m = evaluate_view(&img, &v.image, cfg.crop, cfg.crop_stride)?;
        summary.push_str(&format!("{},{},{}\n", v.name, m.psnr, m.ssim));
        let b = m.band_psnr;
        bands.push_str(&format!("{},{},{},{},{},{}\n", v.name, b[0], b[1], b[2], b[3], b[4]));
        crops.push_str(&format!("{},{},{}\n", v.name, m.low_crop_psnr, m.high_crop_psnr));
        all.push(m);
    }
    let mean = mean_metrics(&all);
    write_text(&layout.eval_summary(), &summary)?;
    println!("iteration {}: {} test views", ck.iteration, all.len());
    println!("PSNR {:.3} dB  SSIM {:.4}", mean.psnr, mean.ssim);
    if a.bands {
        write_text(&layout.eval_bands(), &bands)?;
        for (b, (lo, hi)) in mean.band_psnr.iter().zip(BANDS) {
            println!("band [{lo:>3}, {hi:>3}] deg  PSNR {b:.3} dB");
        }
    }
    if a.crops {
        write_text(&layout.eval_crops(), &crops)?;
        println!("low-frequency crop PSNR {:.3} dB", mean.low_crop_psnr);
        println!("high-frequency crop PSNR {:.3} dB", mean.high_crop_psnr);
    }
    Ok(())
}

fn heatmap_cmd(a: &HeatmapArgs) -> erpnerf::Result<()> {
    let layout = RunLayout::new(&a.run);
    let snap = io::load_sampler_snapshot(&layout.snapshot(a.iter))?;
    let sampler = snap.sampler()?;
    if a.image >= sampler.layout().num_images() {
        return Err(Error::Config(format!(
            "image {} out of range; the run has {} training images",
            a.image,
            sampler.layout().num_images()
        )));
    }
    io::write_gray_png(&a.out, &sampler.heatmap(a.image)?)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Heatmap(a) => heatmap_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
