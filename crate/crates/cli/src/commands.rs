use std::fs;
use std::path::Path;
use std::time::Instant;

use longforest::data::{subject_records, Hyperparams, TextFormat};
use longforest::forest::{
    compute_oob_error, grow_forest, load_forest, predict_new, save_forest, summarize, Forest,
    OutcomeInfo, Prediction,
};
use longforest::importance::{
    compute_gvimp, compute_min_depth, compute_vimp, depth_report, render_report, vimp_report,
    MarkerPermutation, VimpOptions,
};
use longforest::simgen::{generate, SimConfig};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{
    parse_split_option, Config, DataSection, FactorSection, ForestSection, MarkerSection,
    NumericSection, OutcomeSection,
};
use crate::{set_threads, CliError, ForestFlags, VimpFlags};

fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_meta(dir: &Path, meta: serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(&meta).map_err(|e| CliError::Runtime(e.to_string()))?;
    write(&dir.join("meta.json"), text + "\n")
}

/// The forest and the digest of its archive file.
fn read_model(path: &Path) -> Result<(Forest, String), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    Ok((load_forest(&text)?, hex_sha256(text.as_bytes())))
}

fn csv_table(
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

fn apply_flags(cfg: &mut Config, f: &ForestFlags) -> Result<Hyperparams, CliError> {
    let mut hp = cfg.hyperparams()?;
    hp.ntree = f.ntree.unwrap_or(hp.ntree);
    hp.mtry = f.mtry.or(hp.mtry);
    hp.nodesize = f.nodesize.unwrap_or(hp.nodesize);
    hp.minsplit = f.minsplit.unwrap_or(hp.minsplit);
    hp.seed = f.seed.unwrap_or(hp.seed);
    if let Some(s) = &f.nsplit_option {
        hp.nsplit_option = parse_split_option(s)?;
    }
    if let Some(c) = f.cause {
        match &mut cfg.outcome {
            Some(OutcomeSection::Survival { cause, .. }) => *cause = Some(c),
            _ => {
                return Err(CliError::Validation(
                    "--cause needs a survival outcome".into(),
                ))
            }
        }
    }
    Ok(hp)
}

pub fn train(
    config: &Path,
    out_dir: &Path,
    flags: &ForestFlags,
    threads: Option<usize>,
    vsplit: bool,
    with_oob: bool,
) -> Result<(), CliError> {
    let mut cfg = Config::load(config)?;
    let hp = apply_flags(&mut cfg, flags)?;
    let threads = threads.or(cfg.forest.threads);
    set_threads(threads)?;
    let ds = cfg.dataset(&hp)?;
    prepare_dir(out_dir)?;

    let start = Instant::now();
    let forest = grow_forest(&ds, &hp);
    let oob = if with_oob {
        Some(compute_oob_error(&forest, &ds)?)
    } else {
        None
    };
    let elapsed = start.elapsed();

    let archive = save_forest(&forest)?;
    write(&out_dir.join("model.json"), &archive)?;
    let cores = threads.unwrap_or_else(rayon::current_num_threads);
    let summary = summarize(&forest, oob.as_ref(), Some(cores), Some(elapsed));
    print!("{summary}");
    write(&out_dir.join("summary.txt"), &summary)?;
    if vsplit {
        let dir = out_dir.join("vsplit");
        prepare_dir(&dir)?;
        for (b, t) in forest.trees.iter().enumerate() {
            write(&dir.join(format!("tree_{}.csv", b + 1)), t.v_split())?;
        }
    }
    write_meta(
        out_dir,
        json!({
            "command": "train",
            "archive_sha256": hex_sha256(archive.as_bytes()),
            "data_hash": forest.data_hash,
            "hyperparams": hp,
            "oob_error": oob.as_ref().map(|e| e.mean),
        }),
    )
}

pub fn predict(
    model: &Path,
    config: &Path,
    out_dir: &Path,
    t0: Option<f64>,
    at_risk: bool,
) -> Result<(), CliError> {
    let (forest, digest) = read_model(model)?;
    let cfg = Config::load(config)?;
    let schema = &forest.schema;
    let markers = schema.marker_names();
    let long = cfg.longitudinal(&markers)?;
    let fixed_schema = crate::config::schema_columns(schema);
    let fixed = cfg.fixed(&fixed_schema)?;

    let mut ids: Vec<String> = fixed
        .as_ref()
        .map_or_else(Vec::new, |f| f.subjects().to_vec());
    if let Some(l) = &long {
        for id in l.subjects() {
            if !fixed.as_ref().is_some_and(|f| f.contains(id)) {
                ids.push(id.clone());
            }
        }
    }
    let mut dropped = 0;
    if at_risk {
        let t0 = t0.expect("clap enforces --t0");
        let times: std::collections::HashMap<String, f64> =
            cfg.outcome_times()?.into_iter().collect();
        let before = ids.len();
        ids.retain(|id| times.get(id).is_some_and(|&t| t > t0));
        dropped = before - ids.len();
    }
    if ids.is_empty() {
        return Err(CliError::Validation("no subjects to predict".into()));
    }
    let records = subject_records(
        &ids,
        long.as_ref(),
        fixed.as_ref(),
        &markers,
        &schema.numeric,
        &schema.factor_names(),
    )?;
    let res = predict_new(&forest, &records, t0)?;
    prepare_dir(out_dir)?;

    let (header, rows): (Vec<&str>, Vec<Vec<String>>) = match &forest.outcome {
        OutcomeInfo::Numeric => (
            vec!["id", "pred"],
            ids.iter()
                .zip(&res.pred_indiv)
                .map(|(id, p)| match p {
                    Prediction::Numeric(v) => vec![id.clone(), v.to_string()],
                    _ => unreachable!(),
                })
                .collect(),
        ),
        OutcomeInfo::Factor { levels } => (
            vec!["id", "pred", "proba"],
            ids.iter()
                .zip(&res.pred_indiv)
                .map(|(id, p)| match p {
                    Prediction::Factor { category, share } => {
                        vec![
                            id.clone(),
                            levels[*category as usize].clone(),
                            share.to_string(),
                        ]
                    }
                    _ => unreachable!(),
                })
                .collect(),
        ),
        OutcomeInfo::Survival { .. } => (
            vec!["id", "time", "cif"],
            ids.iter()
                .zip(&res.pred_indiv)
                .flat_map(|(id, p)| match p {
                    Prediction::Cif(c) => res
                        .times
                        .iter()
                        .zip(c)
                        .map(|(t, v)| vec![id.clone(), t.to_string(), v.to_string()])
                        .collect::<Vec<_>>(),
                    _ => unreachable!(),
                })
                .collect(),
        ),
    };
    let header: Vec<String> = header.into_iter().map(String::from).collect();
    write(&out_dir.join("predictions.csv"), csv_table(&header, rows)?)?;

    let mut leaf_header = vec!["id".to_string()];
    leaf_header.extend((1..=forest.trees.len()).map(|b| format!("tree_{b}")));
    let leaf_rows = ids.iter().zip(&res.pred_leaf).map(|(id, row)| {
        let mut r = vec![id.clone()];
        r.extend(row.iter().map(|l| l.to_string()));
        r
    });
    write(
        &out_dir.join("leaves.csv"),
        csv_table(&leaf_header, leaf_rows)?,
    )?;
    println!("predicted {} subject(s); {dropped} not at risk", ids.len());
    write_meta(
        out_dir,
        json!({
            "command": "predict",
            "archive_sha256": digest,
            "data_hash": forest.data_hash,
            "t0": t0,
            "at_risk_filter": at_risk,
            "subjects": ids.len(),
            "dropped_not_at_risk": dropped,
        }),
    )
}

/// Forest plus its verified training data.
fn model_and_data(
    model: &Path,
    config: &Path,
) -> Result<(Forest, String, longforest::data::Dataset), CliError> {
    let (forest, digest) = read_model(model)?;
    let cfg = Config::load(config)?;
    let ds = cfg.dataset(&forest.hyperparams)?;
    forest.check_data(&ds)?;
    Ok((forest, digest, ds))
}

pub fn evaluate(model: &Path, config: &Path, out_dir: &Path) -> Result<(), CliError> {
    let (forest, digest, ds) = model_and_data(model, config)?;
    let err = compute_oob_error(&forest, &ds)?;
    prepare_dir(out_dir)?;
    let rows = ds
        .subjects
        .iter()
        .zip(&err.per_subject)
        .map(|(id, e)| vec![id.clone(), e.map_or_else(|| "NA".into(), |v| v.to_string())]);
    write(
        &out_dir.join("oob_error.csv"),
        csv_table(&["id".into(), "error".into()], rows)?,
    )?;
    let summary = csv_table(
        &["type", "mean", "never_oob", "degenerate_weights"].map(String::from),
        [vec![
            err.kind.label().to_string(),
            err.mean.to_string(),
            err.never_oob.len().to_string(),
            err.degenerate_weights.to_string(),
        ]],
    )?;
    write(&out_dir.join("oob_summary.csv"), summary)?;
    println!("Out-of-bag error ({}): {:.4}", err.kind.label(), err.mean);
    write_meta(
        out_dir,
        json!({
            "command": "evaluate",
            "archive_sha256": digest,
            "data_hash": forest.data_hash,
            "type": err.kind.label(),
            "mean": err.mean,
        }),
    )
}

pub fn vimp(
    model: &Path,
    config: &Path,
    out_dir: &Path,
    flags: &VimpFlags,
    grouped: bool,
) -> Result<(), CliError> {
    let (forest, digest, ds) = model_and_data(model, config)?;
    let opts = VimpOptions {
        seed: flags.seed,
        repeats: flags.repeats,
        marker_permutation: if flags.trajectory {
            MarkerPermutation::Trajectory
        } else {
            MarkerPermutation::Observation
        },
    };
    if flags.repeats == 0 {
        return Err(CliError::Validation("repeats must be >= 1".into()));
    }
    let result = if grouped {
        let groups: Vec<(String, Vec<String>)> = Config::load(config)?
            .group
            .into_iter()
            .map(|g| (g.name, g.members))
            .collect();
        if groups.is_empty() {
            return Err(CliError::Validation("config declares no [[group]]".into()));
        }
        compute_gvimp(&forest, &ds, &groups, &opts)?
    } else {
        compute_vimp(&forest, &ds, &opts)?
    };
    let report = render_report(&vimp_report(&result, flags.percentage));
    prepare_dir(out_dir)?;
    let name = if grouped { "gvimp" } else { "vimp" };
    write(&out_dir.join(format!("{name}.csv")), &report)?;
    print!("{report}");
    write_meta(
        out_dir,
        json!({
            "command": name,
            "archive_sha256": digest,
            "data_hash": forest.data_hash,
            "seed": result.seed,
            "repeats": flags.repeats,
            "baseline_oob_error": result.baseline,
        }),
    )
}

pub fn depth(model: &Path, out_dir: &Path) -> Result<(), CliError> {
    let (forest, digest) = read_model(model)?;
    let d = compute_min_depth(&forest);
    prepare_dir(out_dir)?;
    let by_predictor = render_report(&depth_report(&d, false));
    let by_feature = render_report(&depth_report(&d, true));
    write(&out_dir.join("depth_predictor.csv"), &by_predictor)?;
    write(&out_dir.join("depth_feature.csv"), &by_feature)?;
    if let Some(w) = &d.warning {
        println!("{w}");
    }
    print!("{by_predictor}\n{by_feature}");
    write_meta(
        out_dir,
        json!({
            "command": "depth",
            "archive_sha256": digest,
            "data_hash": forest.data_hash,
            "warning": d.warning,
        }),
    )
}

pub fn simulate(
    out_dir: &Path,
    n_subjects: usize,
    n_visits: usize,
    seed: u64,
) -> Result<(), CliError> {
    let sim = generate(&SimConfig {
        n_subjects,
        n_visits,
        seed,
        ..Default::default()
    })?;
    let hp = Hyperparams {
        mtry: Some(1),
        ..Default::default()
    };
    let ds = sim.dataset(&hp)?;
    prepare_dir(out_dir)?;
    let fmt = TextFormat::default();
    let mut long = Vec::new();
    let mut fixed = Vec::new();
    let mut outcome = Vec::new();
    ds.write_longitudinal(&mut long, &fmt, "id", "time")?;
    ds.write_fixed(&mut fixed, &fmt, "id")?;
    ds.write_outcome(&mut outcome, &fmt, "id")?;
    write(&out_dir.join("longitudinal.csv"), long)?;
    write(&out_dir.join("fixed.csv"), fixed)?;
    write(&out_dir.join("outcome.csv"), outcome)?;

    let cfg = Config {
        data: DataSection {
            longitudinal: Some("longitudinal.csv".into()),
            fixed: Some("fixed.csv".into()),
            outcome: Some("outcome.csv".into()),
            id: "id".into(),
            time: "time".into(),
            delimiter: ",".into(),
        },
        marker: sim
            .specs
            .iter()
            .map(|s| MarkerSection {
                name: s.marker.clone(),
                fixed: s.fixed.clone(),
                random: s.random.clone(),
            })
            .collect(),
        numeric: ds
            .numeric
            .iter()
            .map(|c| NumericSection {
                name: c.name.clone(),
            })
            .collect(),
        factor: ds
            .factors
            .iter()
            .map(|c| FactorSection {
                name: c.name.clone(),
                levels: c.levels.clone(),
            })
            .collect(),
        outcome: Some(OutcomeSection::Numeric { column: "y".into() }),
        forest: ForestSection {
            ntree: Some(200),
            mtry: Some(ds.n_predictors()),
            nodesize: Some(1),
            seed: Some(1234),
            ..Default::default()
        },
        ibs: Default::default(),
        group: Vec::new(),
        base: Default::default(),
    };
    let text = toml::to_string(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    write(&out_dir.join("config.toml"), text)?;
    println!(
        "wrote {} subjects to {}",
        ds.n_subjects(),
        out_dir.display()
    );
    Ok(())
}
