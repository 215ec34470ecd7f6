use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ckm_core::cadm::io::{load_model, save_model, write_training_set};
use ckm_core::cadm::CadmModel;
use ckm_core::geometry::{read_scene, write_scene};
use ckm_core::geometry::{Environment, Point2};
use ckm_core::harness::{
    emit_plots, run_crlb_sweep, run_sweep, scenario_scene, scenario_training_set, train_map,
    write_crlb_csv, write_sweep_csv, write_trial_csv, Method, NoisePoint, ScenarioConfig,
    TrainedMap, TrainedMaps,
};
use ckm_core::sensing::{
    localize_ckm, localize_geometry_nlos, read_observation, synthesize_observation,
    write_observation,
};

#[derive(Parser)]
#[command(author, version, about = "CKM-based NLoS target localization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene from a config, or inspect a scene file
    Scene(SceneArgs),
    /// Train an angle-delay map for a scene
    Train(TrainArgs),
    /// Localize one target
    Localize(LocalizeArgs),
    /// RMSE sweep over noise levels for every configured method
    Sweep(SweepArgs),
    /// CRLB sweep over noise levels
    Crlb(SweepArgs),
    /// Render SVG charts from a sweep or CRLB CSV
    Plot(PlotArgs),
    /// Print the default configuration as TOML
    Config,
}

/// Config file plus flag overrides; flags win.
#[derive(Args, Clone, Debug, Default)]
struct ConfigArgs {
    /// TOML scenario config (defaults apply to missing keys)
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_scatterers: Option<usize>,
    #[arg(long)]
    l_prime: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_trials: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Comma-separated subset of geo-los,geo-nlos,ckm-los,ckm-nlos,ckm-nlos-conv
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Angle sweep values (rad), comma-separated
    #[arg(long, value_delimiter = ',')]
    sigma_theta: Option<Vec<f64>>,
    /// Delay sweep values (ns), comma-separated
    #[arg(long, value_delimiter = ',')]
    sigma_tau_ns: Option<Vec<f64>>,
    /// Monte-Carlo score samples for the CRLB sweep (0 = closed form only)
    #[arg(long)]
    mc_samples: Option<usize>,
}

impl ConfigArgs {
    fn load(&self, seed: Option<u64>) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ScenarioConfig::default(),
        };
        if let Some(v) = self.n_scatterers {
            cfg.n_scatterers = v;
        }
        if let Some(v) = self.l_prime {
            cfg.l_prime = v;
        }
        if let Some(v) = self.n_train {
            cfg.n_train = v;
        }
        if let Some(v) = self.n_trials {
            cfg.n_trials = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = &self.methods {
            cfg.methods = v.clone();
        }
        if let Some(v) = &self.sigma_theta {
            cfg.sigma_theta_list = v.clone();
        }
        if let Some(v) = &self.sigma_tau_ns {
            cfg.sigma_tau_list = v.iter().map(|ns| ns * 1e-9).collect();
        }
        if let Some(v) = self.mc_samples {
            cfg.crlb_mc_samples = v;
        }
        if let Some(s) = seed {
            cfg.master_seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SceneArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the generated scene
    #[arg(short, long, conflicts_with = "inspect")]
    out: Option<PathBuf>,
    /// Summarize an existing scene file instead of generating one
    #[arg(long)]
    inspect: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Scene file; generated from the config when absent
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Train with the direct path open
    #[arg(long)]
    los_open: bool,
    #[arg(short, long)]
    out: PathBuf,
    /// Also write the training set as CSV
    #[arg(long)]
    training_set_out: Option<PathBuf>,
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// True target "x,y"; an observation is synthesized for it
    #[arg(long, value_parser = parse_point, required_unless_present = "obs")]
    target: Option<Point2>,
    /// Read the observation from a file instead
    #[arg(long, conflicts_with = "target")]
    obs: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    sigma_theta: f64,
    #[arg(long, default_value_t = 20.0)]
    sigma_tau_ns: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use only the reciprocal composite paths
    #[arg(long)]
    reciprocal: bool,
    /// Write the synthesized observation here
    #[arg(long)]
    save_obs: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Master seed; the whole run is a function of it and the config
    #[arg(long)]
    seed: u64,
    #[arg(short, long, default_value = "out")]
    out_dir: PathBuf,
    /// Pre-trained map for ckm-los (skips training it)
    #[arg(long)]
    los_model: Option<PathBuf>,
    /// Pre-trained map for ckm-nlos / ckm-nlos-conv
    #[arg(long)]
    nlos_model: Option<PathBuf>,
    /// Keep trained maps in the output directory
    #[arg(long)]
    save_models: bool,
}

#[derive(Args)]
struct PlotArgs {
    csv: PathBuf,
    #[arg(short, long, default_value = "plots")]
    out_dir: PathBuf,
}

fn parse_point(s: &str) -> Result<Point2, String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok(Point2::new(num(x)?, num(y)?))
}

fn read_scene_file(path: &Path) -> Result<Environment> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_scene(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))?)
}

fn read_model_file(path: &Path) -> Result<CadmModel> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(load_model(BufReader::new(f)).with_context(|| format!("loading {}", path.display()))?)
}

/// Write through a sibling temp file so readers never see a partial file.
fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        f(&mut w)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn scene_cmd(a: SceneArgs) -> Result<()> {
    if let Some(path) = a.inspect {
        let env = read_scene_file(&path)?;
        println!("bs            ({}, {})", env.bs.x, env.bs.y);
        println!("bounds        {} x {} m", env.bounds.width, env.bounds.height);
        println!("los_blocked   {}", env.los_blocked);
        println!("scatterers    {}", env.scatterers.len());
        return Ok(());
    }
    let cfg = a.cfg.load(a.seed)?;
    let (env, target) = scenario_scene(&cfg)?;
    match a.out {
        Some(p) => write_atomic(&p, |w| Ok(write_scene(&env, w)?))?,
        None => write_scene(&env, std::io::stdout().lock())?,
    }
    eprintln!("target ({:.3}, {:.3})", target.x, target.y);
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = a.cfg.load(a.seed)?;
    let env = match &a.scene {
        Some(p) => read_scene_file(p)?,
        None => scenario_scene(&cfg)?.0,
    };
    let blocked = !a.los_open;
    if let Some(p) = &a.training_set_out {
        let set = scenario_training_set(&cfg, &env, blocked)?;
        write_atomic(p, |w| Ok(write_training_set(&set, w)?))?;
    }
    let t = Instant::now();
    let TrainedMap { model, report } = train_map(&cfg, &env, blocked)?;
    write_atomic(&a.out, |w| Ok(save_model(&model, w)?))?;
    let h = report.holdout;
    eprintln!(
        "trained {} epochs in {:.1?}; final loss {:.4}",
        report.epoch_losses.len(),
        t.elapsed(),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    println!(
        "holdout ({} samples): angle MAE {:.4} rad, delay MAE {:.3} ns, angle median {:.4} rad, delay median {:.3} ns",
        h.samples,
        h.angle_mae_rad,
        h.delay_mae_s * 1e9,
        h.angle_median_rad,
        h.delay_median_s * 1e9
    );
    Ok(())
}

fn localize_cmd(a: LocalizeArgs) -> Result<()> {
    let env = read_scene_file(&a.scene)?;
    let model = read_model_file(&a.model)?;
    let l_prime = model.l_prime;
    let err = NoisePoint {
        sigma_theta: a.sigma_theta,
        sigma_tau: a.sigma_tau_ns * 1e-9,
    }
    .error_spec()?;
    let obs = match (&a.obs, a.target) {
        (Some(p), _) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            let obs = read_observation(BufReader::new(f))?;
            if a.reciprocal {
                obs.reciprocal_subset()
            } else {
                obs
            }
        }
        (None, Some(t)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            synthesize_observation(&env, t, &err, l_prime, a.reciprocal, &mut rng)?
        }
        (None, None) => bail!("either --target or --obs is required"),
    };
    if let Some(p) = &a.save_obs {
        write_atomic(p, |w| Ok(write_observation(&obs, w)?))?;
    }
    let geo = localize_geometry_nlos(&obs, env.bs)?;
    let cfg = ckm_core::sensing::LocalizerConfig {
        noise: Some(err),
        rng_seed: a.seed,
        ..Default::default()
    };
    let r = localize_ckm(&model, &obs, &env.bounds, &cfg, &[geo])?;
    println!("estimate      ({:.4}, {:.4})", r.estimate.x, r.estimate.y);
    println!("nll           {:.6}", r.neg_log_likelihood);
    println!("iterations    {}", r.iterations_used);
    println!("converged     {}", r.converged);
    println!("start         ({:.3}, {:.3})", r.start_used.x, r.start_used.y);
    println!("geo-nlos      ({:.4}, {:.4})", geo.x, geo.y);
    if let Some(t) = a.target {
        println!("error         {:.4} m", r.estimate.distance_to(&t));
        println!("geo-nlos err  {:.4} m", geo.distance_to(&t));
    }
    Ok(())
}

fn prepare(a: &SweepArgs, cfg: &ScenarioConfig) -> Result<(Environment, TrainedMaps)> {
    let (env, _) = scenario_scene(cfg)?;
    std::fs::create_dir_all(&a.out_dir)?;
    write_atomic(&a.out_dir.join("scene.txt"), |w| Ok(write_scene(&env, w)?))?;
    write_atomic(&a.out_dir.join("config.toml"), |w| {
        Ok(w.write_all(cfg.to_toml_string()?.as_bytes())?)
    })?;

    let needs = |m: Method| cfg.methods.contains(&m);
    let mut maps = TrainedMaps::default();
    for (wanted, los_blocked, given, name) in [
        (needs(Method::CkmLos), false, &a.los_model, "los"),
        (
            needs(Method::CkmNlos) || needs(Method::CkmNlosConv),
            cfg.los_blocked,
            &a.nlos_model,
            "nlos",
        ),
    ] {
        if !wanted {
            continue;
        }
        let trained = match given {
            Some(p) => TrainedMap {
                model: read_model_file(p)?,
                report: Default::default(),
            },
            None => {
                let t = Instant::now();
                let m = train_map(cfg, &env, los_blocked)?;
                eprintln!(
                    "trained {name} map in {:.1?}: holdout angle MAE {:.4} rad, delay MAE {:.3} ns",
                    t.elapsed(),
                    m.report.holdout.angle_mae_rad,
                    m.report.holdout.delay_mae_s * 1e9
                );
                if a.save_models {
                    let p = a.out_dir.join(format!("{name}.cadm"));
                    write_atomic(&p, |w| Ok(save_model(&m.model, w)?))?;
                }
                m
            }
        };
        if name == "los" {
            maps.los = Some(trained);
        } else {
            maps.nlos = Some(trained);
        }
    }
    Ok((env, maps))
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let cfg = a.cfg.load(Some(a.seed))?;
    let (env, maps) = prepare(&a, &cfg)?;
    let t = Instant::now();
    let out = run_sweep(&cfg, &maps.context(&env))?;
    eprintln!("sweep finished in {:.1?}", t.elapsed());
    let csv = a.out_dir.join("sweep.csv");
    write_atomic(&csv, |w| Ok(write_sweep_csv(&out.rows, w)?))?;
    write_atomic(&a.out_dir.join("trials.csv"), |w| Ok(write_trial_csv(&out.trials, w)?))?;
    for r in &out.rows {
        println!(
            "{:<14} σθ={:<5} στ={:>5.1} ns  rmse {:>9.4} m  iters {:>6.1}  failures {}",
            r.method.as_str(),
            r.sigma_theta,
            r.sigma_tau * 1e9,
            r.rmse,
            r.mean_iters,
            r.failure_count
        );
    }
    eprintln!("wrote {}", csv.display());
    Ok(())
}

fn crlb_cmd(a: SweepArgs) -> Result<()> {
    let cfg = a.cfg.load(Some(a.seed))?;
    let (env, maps) = prepare(&a, &cfg)?;
    let rows = run_crlb_sweep(&cfg, &maps.context(&env))?;
    let csv = a.out_dir.join("crlb.csv");
    write_atomic(&csv, |w| Ok(write_crlb_csv(&rows, w)?))?;
    for r in &rows {
        println!(
            "{:<14} {:<12} σθ={:<5} στ={:>5.1} ns  trace {:>12.5} m²{}",
            r.method.as_str(),
            r.bound.as_str(),
            r.sigma_theta,
            r.sigma_tau * 1e9,
            r.trace_crlb,
            if r.singular { "  (singular)" } else { "" }
        );
    }
    eprintln!("wrote {}", csv.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Scene(a) => scene_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Localize(a) => localize_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Crlb(a) => crlb_cmd(a),
        Command::Plot(a) => {
            for p in emit_plots(&a.csv, &a.out_dir)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Config => {
            print!("{}", ScenarioConfig::default().to_toml_string()?);
            Ok(())
        }
    }
}
