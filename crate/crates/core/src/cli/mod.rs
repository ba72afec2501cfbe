//! Command implementations behind the `crossview` binary.
//!
//! Exit codes: 0 success, 1 usage, 2 validation, 3 io, 4 numeric.

pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use log::info;
use serde::Serialize;

use crate::autonn::Checkpoint;
use crate::dataset::batch::ImageDims;
use crate::dataset::manifest::manifest_dir;
use crate::dataset::{generate_synthetic_world, load_image, load_manifest, PairSet, Split};
use crate::evaluation::sweep::embed_pairs;
use crate::evaluation::{
    localization_recall, north_noise_sweep, recall_at_k, top_k, EmbeddingIndex, RecallReport,
    DEFAULT_KS,
};
use crate::exec::Execution;
use crate::geometry::{export_uv_png, ground_orientation_map, satellite_orientation_map, View};
use crate::model::{ModelConfig, SiameseModel};
use crate::train::{train, TrainOutputs};
use crate::{Error, Result};

pub use config::RunConfig;

const SUBCOMMANDS: &[(&str, &str)] = &[
    ("synth", "generate a procedural cross-view dataset"),
    ("train", "train the Siamese encoder"),
    ("embed", "embed one side of a manifest into an index file"),
    ("eval", "recall and localization of a ground index against a satellite index"),
    ("sweep", "recall under simulated north-estimation error"),
    ("query", "rank satellite tiles for one panorama"),
    ("orient", "export an orientation (U-V) map as PNG"),
];

pub fn command() -> Command {
    let mut root = Command::new("crossview")
        .about("Orientation-aware cross-view geo-localization")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in SUBCOMMANDS {
        let mut sub = Command::new(*name).about(*about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key = value run configuration"),
        );
        for (key, default, help) in config::KEYS {
            let mut arg = Arg::new(*key)
                .long(*key)
                .value_name("VALUE")
                .action(ArgAction::Set)
                .help(format!("{help} [default: {default}]"));
            if key.contains('_') {
                arg = arg.alias(key.replace('_', "-"));
            }
            sub = sub.arg(arg);
        }
        root = root.subcommand(sub);
    }
    root
}

fn resolve(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        cfg.merge_file(Path::new(path))?;
    }
    for (key, _, _) in config::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let result = resolve(sub).and_then(|cfg| dispatch(name, &cfg));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(name: &str, cfg: &RunConfig) -> Result<()> {
    match name {
        "synth" => cmd_synth(cfg),
        "train" => cmd_train(cfg),
        "embed" => cmd_embed(cfg),
        "eval" => cmd_eval(cfg),
        "sweep" => cmd_sweep(cfg),
        "query" => {
            let stdout = std::io::stdout();
            cmd_query(cfg, &mut stdout.lock())
        }
        "orient" => cmd_orient(cfg),
        other => Err(Error::invalid(format!("unknown command `{other}`"))),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable report");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(text: &str, path: &Path) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require_path("out")?;
    let synth = cfg.synth_config()?;
    create_dir(&out)?;
    let world = generate_synthetic_world(&synth, &out)?;
    cfg.write_snapshot(&out.join("run_config.txt"))?;
    info!(
        "wrote {} locations ({} test) to {}",
        world.locations.len(),
        synth.n_test,
        out.display()
    );
    Ok(())
}

fn select_split(records: Vec<crate::dataset::PairRecord>, split: &str) -> Result<Vec<crate::dataset::PairRecord>> {
    match split {
        "all" => Ok(records),
        s => {
            let want: Split = s.parse().map_err(|e: Error| Error::validation(e.to_string()))?;
            Ok(records.into_iter().filter(|r| r.split == want).collect())
        }
    }
}

fn load_pairs(cfg: &RunConfig, split: &str) -> Result<PairSet> {
    let manifest = cfg.require_path("manifest")?;
    let records = select_split(load_manifest(&manifest)?, split)?;
    PairSet::load(
        records,
        manifest_dir(&manifest),
        cfg.image_dims()?,
        Execution::preferred(),
    )
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require_path("out")?;
    let tcfg = cfg.train_config()?;
    let data = load_pairs(cfg, "train")?;
    create_dir(&out)?;
    cfg.write_snapshot(&out.join("run_config.txt"))?;
    let outputs = TrainOutputs { dir: out };
    let outcome = train(&tcfg, &data, Some(&outputs), Execution::preferred())?;
    info!(
        "trained {} steps, final loss {:.5}; checkpoint {}",
        tcfg.steps,
        outcome.losses.last().copied().unwrap_or(f64::NAN),
        outputs.checkpoint().display()
    );
    Ok(())
}

/// Loads a checkpoint; the architecture comes from `model.manifest` beside
/// it when present, otherwise from the run config.
pub fn load_model(cfg: &RunConfig) -> Result<SiameseModel> {
    let ckpt_path = cfg.require_path("checkpoint")?;
    let manifest = ckpt_path
        .parent()
        .map(|d| d.join("model.manifest"))
        .filter(|p| p.exists());
    let (model_cfg, seed) = match manifest {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            ModelConfig::parse_manifest(&text)?
        }
        None => (cfg.model_config()?, cfg.get("seed")?),
    };
    let mut model = SiameseModel::new(model_cfg, seed)?;
    model.load_checkpoint(&Checkpoint::load(&ckpt_path)?)?;
    Ok(model)
}

pub fn cmd_embed(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require_path("out")?;
    let side: View = cfg
        .raw("side")
        .parse()
        .map_err(|e: Error| Error::validation(e.to_string()))?;
    let mut model = load_model(cfg)?;
    let data = load_pairs(cfg, cfg.raw("split"))?;
    let images = match side {
        View::Ground => &data.ground,
        View::Satellite => &data.satellite,
    };
    let emb = embed_pairs(&mut model, images, side, Execution::preferred())?;
    let ids = data.records.iter().map(|r| r.id.clone()).collect();
    let positions: Option<Vec<(f64, f64)>> =
        data.records.iter().map(|r| r.position()).collect();
    let index = EmbeddingIndex::build(ids, &emb, positions)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    index.save(&out)?;
    cfg.write_snapshot(&sibling(&out, "config.txt"))?;
    info!("embedded {} {} images into {}", index.len(), side.name(), out.display());
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

#[derive(Serialize)]
struct EvalReport {
    recall: RecallReport,
    localization_radius_m: f64,
    /// `(N_top, fraction localized)`
    localization: Option<Vec<(usize, f64)>>,
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require_path("out")?;
    let ground = EmbeddingIndex::load(&cfg.require_path("ground_index")?)?;
    let satellite = EmbeddingIndex::load(&cfg.require_path("satellite_index")?)?;
    let queries: Vec<Vec<f64>> = (0..ground.len()).map(|i| ground.row_f64(i)).collect();
    let gt: Vec<&str> = ground.ids().iter().map(String::as_str).collect();
    let exec = Execution::preferred();
    let recall = recall_at_k(&satellite, &queries, &gt, &DEFAULT_KS, exec)?;
    let radius: f64 = cfg.get("radius")?;
    let localization = match (satellite.positions(), ground.positions()) {
        (Some(_), Some(qp)) => {
            let mut rows = Vec::new();
            for k in DEFAULT_KS.iter().copied().chain([recall.k_top1percent]) {
                rows.push((k, localization_recall(&satellite, &queries, qp, k, radius, exec)?));
            }
            Some(rows)
        }
        _ => None,
    };
    create_dir(&out)?;
    write_text(&recall.to_csv(), &out.join("recall.csv"))?;
    if let Some(rows) = &localization {
        let mut s = String::from("n_top,localized\n");
        for (k, f) in rows {
            s.push_str(&format!("{k},{f}\n"));
        }
        write_text(&s, &out.join("localization.csv"))?;
    }
    write_json(
        &EvalReport {
            recall,
            localization_radius_m: radius,
            localization,
        },
        &out.join("report.json"),
    )?;
    cfg.write_snapshot(&out.join("run_config.txt"))
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require_path("out")?;
    let mut model = load_model(cfg)?;
    let data = load_pairs(cfg, cfg.raw("split"))?;
    let levels = cfg.list_f64("levels")?;
    let report = north_noise_sweep(
        &mut model,
        &data,
        &levels,
        &DEFAULT_KS,
        cfg.get("seed")?,
        Execution::preferred(),
    )?;
    create_dir(&out)?;
    write_text(&report.to_csv(), &out.join("sweep.csv"))?;
    write_json(&report, &out.join("sweep.json"))?;
    cfg.write_snapshot(&out.join("run_config.txt"))
}

pub fn cmd_query(cfg: &RunConfig, w: &mut dyn Write) -> Result<()> {
    let index = EmbeddingIndex::load(&cfg.require_path("satellite_index")?)?;
    let mut model = load_model(cfg)?;
    let dims: ImageDims = cfg.image_dims()?;
    let img = load_image(&cfg.require_path("image")?, dims.ground_h, dims.ground_w)?;
    let emb = model.embed(&img.to_tensor(), View::Ground)?;
    let k: usize = cfg.get("top_k")?;
    let hits = top_k(&index, emb.as_slice(), k.max(1))?;
    let io = |e| Error::io("<stdout>", e);
    writeln!(w, "rank,id,distance").map_err(io)?;
    for (rank, h) in hits.iter().enumerate() {
        writeln!(w, "{},{},{}", rank + 1, h.id, h.distance).map_err(io)?;
    }
    Ok(())
}

pub fn cmd_orient(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require_path("out")?;
    let view: View = cfg
        .raw("view")
        .parse()
        .map_err(|e: Error| Error::validation(e.to_string()))?;
    let dims = cfg.image_dims()?;
    let map = match view {
        View::Ground => ground_orientation_map(dims.ground_w, dims.ground_h)?,
        View::Satellite => satellite_orientation_map(dims.satellite_w, dims.satellite_h)?,
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    export_uv_png(&map, &out, cfg.get("color")?)?;
    cfg.write_snapshot(&sibling(&out, "config.txt"))
}
