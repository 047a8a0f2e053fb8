//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::data::{save_cube, save_labels, synth_scene, Interleave, SplitSpec};
use crate::error::{Error, Result};
use crate::gradcheck::primitive_suite;
use crate::model::{end_to_end_gradcheck, END_TO_END_SAMPLES};
use crate::train::{
    ablate, ablation_report, ablation_table, evaluate, load_model, predict, report_text,
    save_model, train, write_ppm, DataSource, Prepared, RunConfig, Scene,
};

#[derive(Debug, Parser)]
#[command(
    name = "spgat",
    version,
    about = "Spectral pyramid graph attention for hyperspectral pixels"
)]
pub struct Cli {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Start from the full-budget preset (500 epochs, 10 sessions, wide bottlenecks).
    #[arg(long, global = true)]
    pub paper_scale: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InterleaveArg {
    Bsq,
    Bip,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic scene: cube.hdr, cube.raw, labels.raw.
    Synth {
        #[arg(long, value_enum, default_value = "bsq")]
        interleave: InterleaveArg,
    },
    /// Train one model; writes model.txt, split.csv and loss.csv.
    Train,
    /// Score a model on the held-out split; writes metrics.txt and confusion.csv.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Split file to evaluate on instead of redrawing the configured split.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Render predictions for every labeled pixel to map.ppm.
    PredictMap {
        #[arg(long)]
        model: PathBuf,
    },
    /// Check every primitive and the whole network against finite differences.
    Gradcheck,
    /// Train all four variants; writes metrics.txt and one confusion CSV per variant.
    Ablate,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let base = if cli.paper_scale {
        RunConfig::full_scale()
    } else {
        RunConfig::toy()
    };
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(base, path)?,
        None => base,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = resolve_config(cli)?;
    let out = &cli.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    match &cli.command {
        Command::Synth { interleave } => {
            let DataSource::Synth(params) = &mut cfg.data else {
                return Err(Error::Config(
                    "synth_*: the config names cube files, not a synthetic scene".into(),
                ));
            };
            if let Some(seed) = cli.seed {
                params.seed = seed;
            }
            let (cube, labels) = synth_scene(params)?;
            let il = match interleave {
                InterleaveArg::Bsq => Interleave::Bsq,
                InterleaveArg::Bip => Interleave::Bip,
            };
            save_cube(&cube, &out.join("cube.hdr"), &out.join("cube.raw"), il)?;
            save_labels(&labels, &out.join("labels.raw"))?;
            println!(
                "wrote {}x{}x{} cube with {} classes to {}",
                cube.bands(),
                cube.height(),
                cube.width(),
                labels.num_classes(),
                out.display()
            );
        }
        Command::Train => {
            let scene = Scene::load(&cfg)?;
            let data = Prepared::from_config(&scene, &cfg)?;
            let model_config = cfg.model_config(cfg.variant, data.bands, data.classes);
            let trained = train(
                model_config,
                &data.train,
                cfg.epochs,
                cfg.lr,
                cfg.batch_size,
                cfg.seed,
            )?;
            save_model(&trained.model, &out.join("model.txt"))?;
            data.split.save(&out.join("split.csv"))?;
            let mut loss = String::from("epoch,loss\n");
            for (e, l) in trained.losses.iter().enumerate() {
                loss.push_str(&format!("{e},{l}\n"));
            }
            write(&out.join("loss.csv"), &loss)?;
            println!(
                "trained {} on {} patches; final loss {}",
                cfg.variant,
                data.train.labels.len(),
                trained.losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Eval { model, split } => {
            let model = load_model(model)?;
            let scene = Scene::load(&cfg)?;
            check_compatible(&model.config, &scene)?;
            let data = match split {
                Some(path) => Prepared::new(&scene, SplitSpec::load(path)?, model.config.patch)?,
                None => Prepared::from_config(
                    &scene,
                    &RunConfig {
                        patch: model.config.patch,
                        ..cfg.clone()
                    },
                )?,
            };
            let report = evaluate(&model, &data.test)?;
            write(&out.join("metrics.txt"), &report_text(cfg.variant, &report))?;
            write(&out.join("confusion.csv"), &report.confusion_csv())?;
            println!(
                "OA {:.4}  AA {:.4}  kappa {:.4}",
                report.oa, report.aa, report.kappa
            );
        }
        Command::PredictMap { model } => {
            let model = load_model(model)?;
            let scene = Scene::load(&cfg)?;
            check_compatible(&model.config, &scene)?;
            let coords = scene.labels.labeled();
            let mut map = vec![0u16; scene.labels.height() * scene.labels.width()];
            if !coords.is_empty() {
                let inputs = crate::data::extract_inputs(&scene.cube, &coords, model.config.patch)?;
                for ((r, c), k) in coords.iter().zip(predict(&model, &inputs)?) {
                    map[r * scene.labels.width() + c] = k as u16 + 1;
                }
            }
            write_ppm(
                &out.join("map.ppm"),
                scene.labels.height(),
                scene.labels.width(),
                &map,
            )?;
            println!("wrote {}", out.join("map.ppm").display());
        }
        Command::Gradcheck => {
            let seed = cli.seed.unwrap_or(0);
            let mut reports = primitive_suite(seed)?;
            reports.push(end_to_end_gradcheck(seed, Some(END_TO_END_SAMPLES))?);
            let mut failed = 0;
            for r in &reports {
                let tag = if r.passed() { "PASS" } else { "FAIL" };
                failed += usize::from(!r.passed());
                println!(
                    "{tag} {:<32} max rel err {:.3e} over {} coords",
                    r.name, r.max_rel_err, r.coords
                );
            }
            if failed > 0 {
                return Err(Error::Numeric(format!(
                    "{failed} of {} gradient checks failed",
                    reports.len()
                )));
            }
            println!("all {} gradient checks passed", reports.len());
        }
        Command::Ablate => {
            let scene = Scene::load(&cfg)?;
            let data = Prepared::from_config(&scene, &cfg)?;
            let reports = ablate(&cfg, &data)?;
            write(&out.join("metrics.txt"), &ablation_report(&reports))?;
            for r in &reports {
                write(
                    &out.join(format!("confusion_{}.csv", r.variant)),
                    &crate::train::confusion_csv(&r.summed_confusion()),
                )?;
            }
            print!("{}", ablation_table(&reports));
        }
    }
    Ok(())
}

fn check_compatible(config: &crate::model::ModelConfig, scene: &Scene) -> Result<()> {
    if config.bands != scene.cube.bands() || config.classes != scene.labels.num_classes() {
        return Err(Error::Format(format!(
            "model expects {} bands and {} classes, scene has {} and {}",
            config.bands,
            config.classes,
            scene.cube.bands(),
            scene.labels.num_classes()
        )));
    }
    Ok(())
}

/// Parses `args`, runs the command and maps the outcome to an exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
