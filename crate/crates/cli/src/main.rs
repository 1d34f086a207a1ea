use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use gnocchi::analysis::{pca_project, MetricReport, NavigationMap, TARGET_X, TARGET_Y};
use gnocchi::diffusion::{train_gnocchi, GnocchiModel};
use gnocchi::experiment::{
    build_world, code_snr_report, compare_models, conditional_generation, evaluate_model, fit_decoder, heldout_split,
    train_pair, unconditional_span, CodeModel,
};
use gnocchi::io::{
    atomic_write, load_dataset, load_gnocchi, load_lfads, save_controller, save_dataset, save_gnocchi, save_lfads,
    save_vectors, Container, ExperimentConfig, Provenance, Tensor, KIND_GNOCCHI, KIND_LFADS,
};
use gnocchi::lfads::{train_lfads, LfadsModel};
use gnocchi::synth::{Split, TrialDataset};

mod svg;

#[derive(Parser)]
#[command(name = "gnocchi", version, about = "Synthetic reaching data, code-conditioned diffusion and LFADS-lite")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `section.field = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra `section.field=value` overrides, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for every stage; overrides the per-section seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root.
    #[arg(long, global = true, env = "GNOCCHI_OUT")]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the controller, record trials and write full/heldin/heldout datasets.
    SynthData,
    /// Train a model on the train/valid tags of a dataset.
    Train {
        #[arg(value_enum)]
        kind: ModelKind,
        #[arg(long)]
        data: PathBuf,
    },
    /// Generate activity from a model, from prior codes or codes of a dataset.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 16)]
        n: usize,
        /// Use the codes of these trials instead of prior draws.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Sweep one behavioural variable from an anchor trial's code.
    Navigate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Feature::TargetX)]
        feature: Feature,
        /// Index of the anchor trial in `data`.
        #[arg(long, default_value_t = 0)]
        anchor: usize,
    },
    /// Evaluate two models on the same data and compare them.
    Metrics {
        /// Exactly two model files.
        #[arg(long = "model", num_args = 1, required = true)]
        models: Vec<PathBuf>,
        /// Held-in dataset (train/valid tags).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        heldout: PathBuf,
    },
    /// Static SVG figures.
    Plot {
        #[arg(value_enum)]
        what: PlotKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// End-to-end recipes.
    Reproduce {
        #[arg(value_enum)]
        figure: Figure,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Gnocchi,
    Lfads,
}

#[derive(Clone, Copy, ValueEnum)]
enum Feature {
    TargetX,
    TargetY,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    CodesPca,
    Trajectories,
}

#[derive(Clone, Copy, ValueEnum)]
enum Figure {
    Fig2,
    Fig3,
}

enum AnyModel {
    Gnocchi(GnocchiModel),
    Lfads(LfadsModel),
}

impl AnyModel {
    fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(match c.kind.as_str() {
            KIND_GNOCCHI => Self::Gnocchi(load_gnocchi(path)?),
            KIND_LFADS => Self::Lfads(load_lfads(path)?),
            other => bail!("{}: not a model file (kind {other:?})", path.display()),
        })
    }

    fn as_dyn(&self) -> &dyn CodeModel {
        match self {
            Self::Gnocchi(m) => m,
            Self::Lfads(m) => m,
        }
    }

    /// Prior draws in the model's own code space.
    fn prior_codes(&self, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let (l, sd) = match self {
            Self::Gnocchi(m) => (m.latent_dim(), 1.0),
            Self::Lfads(m) => (m.latent_dim(), m.config.ic_prior_variance.sqrt()),
        };
        let normal = Normal::new(0.0, sd).expect("positive variance");
        Array2::from_shape_simple_fn((n, l), || normal.sample(rng))
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self> {
        let mut text = match &common.config {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        for o in &common.overrides {
            text.push('\n');
            text.push_str(o);
        }
        let mut cfg = ExperimentConfig::parse(&text)?;
        if let Some(s) = common.seed {
            cfg.run.seed = s;
            cfg.controller.seed = s;
            cfg.dataset.seed = s;
            cfg.gnocchi.seed = s;
            cfg.lfads.seed = s;
        }
        let out = common.out_dir.clone().unwrap_or_else(|| cfg.run.out_dir.clone());
        Ok(Self { cfg, out })
    }

    /// Output directory for one command, with its provenance record.
    fn dir(&self, name: &str) -> Result<PathBuf> {
        let dir = self.out.join(name);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Provenance::new(name, &self.cfg).write(&dir, &self.cfg)?;
        Ok(dir)
    }
}

fn read_data(path: &Path) -> Result<TrialDataset> {
    load_dataset(path).with_context(|| format!("reading {}", path.display()))
}

fn write_report(dir: &Path, report: &MetricReport) -> Result<()> {
    atomic_write(&dir.join("report.txt"), report.to_string().as_bytes())?;
    print!("{report}");
    Ok(())
}

fn write_activity(path: &Path, codes: &Array2<f64>, activity: &Array3<f64>) -> Result<()> {
    let mut c = Container::new("samples", Default::default());
    c.insert("codes", Tensor::f64(codes.shape().to_vec(), codes.iter().copied().collect()));
    c.insert(
        "activity",
        Tensor::f32(activity.shape().to_vec(), activity.iter().map(|&v| v as f32).collect()),
    );
    c.write(path)?;
    Ok(())
}

fn synth_data(ctx: &Ctx) -> Result<()> {
    let dir = ctx.dir("synth-data")?;
    let world = build_world(&ctx.cfg)?;
    let (heldin, heldout) = heldout_split(&world.dataset, &ctx.cfg);
    save_controller(&dir.join("controller.gnc"), &world.policy)?;
    save_dataset(&dir.join("dataset.gnc"), &world.dataset)?;
    save_dataset(&dir.join("heldin.gnc"), &heldin)?;
    save_dataset(&dir.join("heldout.gnc"), &heldout)?;
    let mut r = MetricReport::new();
    r.set("controller_final_error_m", world.controller_log.validation_final_error);
    r.set("trials", world.dataset.len() as f64);
    r.set("heldin_trials", heldin.len() as f64);
    r.set("heldout_trials", heldout.len() as f64);
    r.set("heldout_fraction", heldout.len() as f64 / world.dataset.len().max(1) as f64);
    write_report(&dir, &r)
}

fn train(ctx: &Ctx, kind: ModelKind, data: &Path) -> Result<()> {
    let ds = read_data(data)?;
    let (train, valid) = (ds.split(Split::Train), ds.split(Split::Valid));
    match kind {
        ModelKind::Gnocchi => {
            let dir = ctx.dir("train-gnocchi")?;
            let (m, log) = train_gnocchi(&train, &valid, &ctx.cfg.gnocchi)?;
            save_gnocchi(&dir.join("model.gnc"), &m)?;
            let valid: Vec<f64> = log.valid.iter().map(|l| l.total).collect();
            let train: Vec<f64> = log.train.iter().map(|l| l.total).collect();
            save_vectors(&dir.join("losses.gnc"), &[("train", &train), ("valid", &valid)])?;
            info!("best epoch {} of {}", log.best_epoch, valid.len());
        }
        ModelKind::Lfads => {
            let dir = ctx.dir("train-lfads")?;
            let (m, log) = train_lfads(&train, &valid, &ctx.cfg.lfads)?;
            save_lfads(&dir.join("model.gnc"), &m)?;
            let valid: Vec<f64> = log.valid.iter().map(|l| l.total).collect();
            let train: Vec<f64> = log.train.iter().map(|l| l.total).collect();
            save_vectors(&dir.join("losses.gnc"), &[("train", &train), ("valid", &valid)])?;
            info!("best epoch {} of {}", log.best_epoch, valid.len());
        }
    }
    Ok(())
}

fn sample(ctx: &Ctx, model: &Path, n: usize, data: Option<&Path>) -> Result<()> {
    let m = AnyModel::load(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.run.seed);
    let codes = match data {
        Some(p) => m.as_dyn().codes(&read_data(p)?)?,
        None => m.prior_codes(n, &mut rng),
    };
    let activity = m.as_dyn().generate(codes.view(), &mut rng)?;
    let dir = ctx.dir("sample")?;
    write_activity(&dir.join("samples.gnc"), &codes, &activity)
}

fn navigate(ctx: &Ctx, model: &Path, data: &Path, feature: Feature, anchor: usize) -> Result<()> {
    let m = AnyModel::load(model)?;
    let ds = read_data(data)?;
    if anchor >= ds.len() {
        bail!("anchor {anchor} out of range for {} trials", ds.len());
    }
    let feature = match feature {
        Feature::TargetX => TARGET_X,
        Feature::TargetY => TARGET_Y,
    };
    let codes = m.as_dyn().codes(&ds)?;
    let mut map = NavigationMap::fit(codes.view(), ds.behavior_f64().view())?;
    let steps = ctx.cfg.run.sweep_steps.max(1);
    let half = (steps / 2) as i64;
    let w = map.w.row(feature);
    map.anchor = codes.row(anchor).to_owned();
    map.step = ds.grid.span / (2 * half).max(1) as f64 / w.dot(&w).max(1e-12);
    let rows: Vec<_> = (-half..=half)
        .map(|i| map.navigate(feature, i as f64, 1.0))
        .collect::<gnocchi::Result<_>>()?;
    let sweep = ndarray::stack(Axis(0), &rows.iter().map(|r| r.view()).collect::<Vec<_>>())?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.run.seed);
    let activity = m.as_dyn().generate_shared_noise(sweep.view(), &mut rng)?;
    let dir = ctx.dir("navigate")?;
    write_activity(&dir.join("sweep.gnc"), &sweep, &activity)?;
    let decoder = fit_decoder(&ds, 1.0)?;
    let groups = activity
        .outer_iter()
        .enumerate()
        .map(|(k, a)| {
            let traj = decoder.decode(a)?;
            Ok(svg::Group {
                label: format!("step {}", k as i64 - half),
                points: traj.rows().into_iter().map(|r| [r[0], r[1]]).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    atomic_write(&dir.join("sweep.svg"), svg::plot("decoded sweep", &groups, svg::Mark::Lines).as_bytes())?;
    Ok(())
}

fn metrics(ctx: &Ctx, models: &[PathBuf], data: &Path, heldout: &Path) -> Result<()> {
    if models.len() != 2 {
        bail!("metrics needs exactly two --model files, got {}", models.len());
    }
    let heldin = read_data(data)?;
    let heldout = read_data(heldout)?;
    let decoder = fit_decoder(&heldin, 1.0)?;
    let run = &ctx.cfg.run;
    let evals = models
        .iter()
        .map(|p| {
            let m = AnyModel::load(p)?;
            Ok(evaluate_model(
                m.as_dyn(),
                &heldin,
                &heldout,
                &decoder,
                run.cv_folds,
                10,
                run.sweep_steps,
                run.seed,
            )?)
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = ctx.dir("metrics")?;
    write_report(&dir, &compare_models(&evals[0], &evals[1])?)
}

fn plot(ctx: &Ctx, what: PlotKind, data: &Path, model: Option<&Path>) -> Result<()> {
    let ds = read_data(data)?;
    let labels = ds.target_conditions();
    let dir = ctx.dir("plot")?;
    match what {
        PlotKind::CodesPca => {
            let Some(model) = model else { bail!("codes-pca needs --model") };
            let m = AnyModel::load(model)?;
            let codes = m.as_dyn().codes(&ds)?;
            let pca = pca_project(codes.view(), 2)?;
            let pts = pca.projections.rows().into_iter().map(|r| [r[0], r[1]]).collect();
            let s = svg::plot("codes, first two PCs", &group_points(pts, &labels), svg::Mark::Dots);
            atomic_write(&dir.join("codes_pca.svg"), s.as_bytes())?;
        }
        PlotKind::Trajectories => {
            let groups: Vec<svg::Group> = ds
                .endpoints
                .outer_iter()
                .enumerate()
                .map(|(i, tr)| svg::Group {
                    label: format!("trial {i} target {}", labels[i]),
                    points: tr.rows().into_iter().map(|r| [f64::from(r[0]), f64::from(r[1])]).collect(),
                })
                .collect();
            let s = svg::plot("hand trajectories", &groups, svg::Mark::Lines);
            atomic_write(&dir.join("trajectories.svg"), s.as_bytes())?;
        }
    }
    Ok(())
}

fn reproduce(ctx: &Ctx, figure: Figure) -> Result<()> {
    let world = build_world(&ctx.cfg)?;
    let (heldin, heldout) = heldout_split(&world.dataset, &ctx.cfg);
    let run = &ctx.cfg.run;
    match figure {
        Figure::Fig2 => {
            let dir = ctx.dir("fig2")?;
            let mut r = MetricReport::new();
            let valid = heldin.split(Split::Valid);
            for k in 0..run.n_seeds {
                let (g, l) = train_pair(&heldin, &ctx.cfg, k as u64)?;
                r.merge_prefixed(&format!("seed{k}"), &code_snr_report(&g, &l, &valid)?);
                if k == 0 {
                    for (name, m) in [("gnocchi", &g as &dyn CodeModel), ("lfads", &l)] {
                        let codes = m.codes(&valid)?;
                        let pca = pca_project(codes.view(), 2)?;
                        let groups = group_points(
                            pca.projections.rows().into_iter().map(|r| [r[0], r[1]]).collect(),
                            &valid.target_conditions(),
                        );
                        let s = svg::plot(&format!("{name} codes"), &groups, svg::Mark::Dots);
                        atomic_write(&dir.join(format!("codes_{name}.svg")), s.as_bytes())?;
                    }
                }
            }
            write_report(&dir, &r)
        }
        Figure::Fig3 => {
            let dir = ctx.dir("fig3")?;
            let (g, l) = train_pair(&heldin, &ctx.cfg, 0)?;
            let decoder = fit_decoder(&heldin, 1.0)?;
            let eval = |m: &dyn CodeModel| {
                evaluate_model(m, &heldin, &heldout, &decoder, run.cv_folds, 10, run.sweep_steps, run.seed)
            };
            let (eg, el) = (eval(&g)?, eval(&l)?);
            let mut r = compare_models(&eg, &el)?;
            r.set(
                "gnocchi_conditional_hit_rate",
                conditional_generation(&g, &heldin, &decoder, run.samples_per_condition, run.seed)?,
            );
            r.set("gnocchi_unconditional_span", unconditional_span(&g, &heldin, &decoder, 200, run.seed)?);
            save_vectors(
                &dir.join("heldout_errors.gnc"),
                &[("gnocchi", &eg.heldout_errors), ("lfads", &el.heldout_errors)],
            )?;
            let pts = eg.heldout_errors.iter().zip(&el.heldout_errors).map(|(a, b)| [*b, *a]).collect();
            let groups = [svg::Group {
                label: "heldout trials".into(),
                points: pts,
            }];
            let s = svg::plot("heldout target error: lfads (x) vs gnocchi (y)", &groups, svg::Mark::Dots);
            atomic_write(&dir.join("heldout_errors.svg"), s.as_bytes())?;
            write_report(&dir, &r)
        }
    }
}

fn group_points(points: Vec<[f64; 2]>, labels: &[usize]) -> Vec<svg::Group> {
    let mut conds = labels.to_vec();
    conds.sort_unstable();
    conds.dedup();
    conds
        .iter()
        .map(|&c| svg::Group {
            label: format!("target {c}"),
            points: points.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| *p).collect(),
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx::new(&cli.common)?;
    match cli.command {
        Command::SynthData => synth_data(&ctx),
        Command::Train { kind, data } => train(&ctx, kind, &data),
        Command::Sample { model, n, data } => sample(&ctx, &model, n, data.as_deref()),
        Command::Navigate {
            model,
            data,
            feature,
            anchor,
        } => navigate(&ctx, &model, &data, feature, anchor),
        Command::Metrics { models, data, heldout } => metrics(&ctx, &models, &data, &heldout),
        Command::Plot { what, data, model } => plot(&ctx, what, &data, model.as_deref()),
        Command::Reproduce { figure } => reproduce(&ctx, figure),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
