use crate::error::CliError;
use crate::workspace::Workspace;
use crate::Command;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use vulforge::codefeat::featurize_code;
use vulforge::ensembles::{
    adaboost_fit, bagging_fit, combine_sets, dgs_fit, member_id, stacking_fit, BaggingEnsemble,
    BoostVariant, BuiltinRounds, DgsConfig, Ensemble, EnsembleFile, ExternalRounds, VoteMode,
};
use vulforge::ingest::{bootstrap, cwe_frequencies, cwe_subset, load_dataset, stratified_split, Dataset, Split, SplitIndices};
use vulforge::learners::{
    fit_builtin, predict_split, preds_path, read_prediction_rows, round_preds_path, write_prediction_rows,
    FeatureTable, LinearModel, SampleWeights,
};
use vulforge::metrics::{
    average_rank, correct_ids, csv_out, divergence, evaluate_set, overlap_regions, MetricsReport, ScoreTable,
    TieRule, MAX_OVERLAP_SETS,
};
use vulforge::synth::{vuln_corpus, CorpusConfig};
use vulforge::{Label, PredictionSet};

pub fn execute(ws: &mut Workspace, cmd: &Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth {
            samples,
            positive_rate,
            cwes,
            label_noise,
            paired,
            multiclass,
        } => synth(ws, *samples, *positive_rate, *cwes, *label_noise, *paired, *multiclass),
        Command::Split => split(ws),
        Command::Featurize => featurize(ws),
        Command::TrainBase { model_id } => train_base(ws, model_id),
        Command::Bag { base_id, .. } => bag(ws, base_id),
        Command::Boost { base_id, .. } => boost(ws, base_id),
        Command::Stack { bases, .. } => stack(ws, bases),
        Command::Dgs { bases, .. } => dgs(ws, bases),
        Command::Eval { models, split } => eval(ws, models, *split),
        Command::Rank { scores, tie } => rank(ws, scores, *tie),
        Command::Overlap { models, split } => overlap(ws, models, *split),
        Command::Divergence { members, methods, split } => divergence_cmd(ws, members, methods, *split),
        Command::CweSubsets { top } => cwe_subsets(ws, *top),
        Command::Verify => unreachable!("handled before a workspace is opened"),
    }
}

fn rel_preds(model_id: &str, split: Split) -> String {
    format!("preds/{model_id}/{split}.jsonl")
}

fn load_dataset_cfg(ws: &Workspace) -> Result<Dataset, CliError> {
    let d = load_dataset(ws.config.dataset()?, ws.config.schema)?;
    if d.is_empty() {
        return Err(CliError::Data("dataset has no samples".into()));
    }
    Ok(d)
}

fn load_inputs(ws: &Workspace) -> Result<(Dataset, SplitIndices), CliError> {
    let d = load_dataset_cfg(ws)?;
    let splits: SplitIndices = ws.read_json("splits.json", "split")?;
    splits.check_against(&d)?;
    Ok((d, splits))
}

fn truth(d: &Dataset, ids: &[String]) -> BTreeMap<String, Label> {
    ids.iter()
        .map(|id| (id.clone(), d.label_of(id).expect("split ids are checked against the dataset")))
        .collect()
}

fn table(ws: &Workspace, d: &Dataset) -> Result<FeatureTable, CliError> {
    Ok(FeatureTable::build(d, &ws.config.features)?)
}

/// External predictions take precedence over ones in the output directory.
fn find_preds(ws: &Workspace, model_id: &str, split: Split) -> Option<PathBuf> {
    ws.config
        .external
        .as_deref()
        .map(|e| preds_path(e, model_id, split))
        .into_iter()
        .chain(std::iter::once(preds_path(&ws.out, model_id, split)))
        .find(|p| p.exists())
}

fn load_preds(ws: &Workspace, model_id: &str, split: Split, ids: &[String]) -> Result<PredictionSet, CliError> {
    let path = find_preds(ws, model_id, split).ok_or_else(|| {
        CliError::ProtocolOrder(format!(
            "no {split} predictions for {model_id:?}; run `train-base --model-id {model_id}` or provide preds/{model_id}/{split}.jsonl in the external directory"
        ))
    })?;
    Ok(read_prediction_rows(&path, model_id, split, ids)?)
}

fn write_preds(ws: &mut Workspace, set: &PredictionSet) -> Result<(), CliError> {
    let rel = rel_preds(&set.model_id, set.split);
    write_prediction_rows(&ws.path(&rel), set)?;
    ws.record(&rel)
}

#[derive(Serialize)]
struct ReportRow<'a> {
    method: &'a str,
    metrics: &'a MetricsReport,
}

#[derive(Serialize)]
struct ReportBody<'a> {
    split: Split,
    rows: Vec<ReportRow<'a>>,
}

fn write_report(ws: &mut Workspace, dir: &str, split: Split, rows: &[(String, MetricsReport)]) -> Result<(), CliError> {
    let prefix = if dir.is_empty() { String::new() } else { format!("{dir}/") };
    let body = ReportBody {
        split,
        rows: rows
            .iter()
            .map(|(m, r)| ReportRow { method: m, metrics: r })
            .collect(),
    };
    ws.write_json(&format!("{prefix}report.json"), &body)?;
    ws.write_bytes(&format!("{prefix}report.csv"), csv_out::metrics(rows).as_bytes())?;
    for (m, r) in rows {
        log::info!("{m}: accuracy {:.4} f1 {:.4}", r.accuracy, r.f1());
    }
    Ok(())
}

fn write_ensemble(ws: &mut Workspace, dir: &str, ensemble: Ensemble) -> Result<(), CliError> {
    let file = EnsembleFile::new(ensemble, ws.echo().clone(), ws.hash.clone());
    ws.write_plain_json(&format!("{dir}/ensemble.json"), &file)
}

fn synth(
    ws: &mut Workspace,
    samples: usize,
    positive_rate: Option<f64>,
    cwes: Option<usize>,
    label_noise: Option<f64>,
    paired: bool,
    multiclass: bool,
) -> Result<(), CliError> {
    let base = CorpusConfig::default();
    let cfg = CorpusConfig {
        samples,
        positive_rate: positive_rate.unwrap_or(base.positive_rate),
        cwes: cwes.unwrap_or(base.cwes),
        label_noise: label_noise.unwrap_or(base.label_noise),
        paired,
        multiclass,
        seed: ws.config.seed,
        ..base
    };
    let d = vuln_corpus(&cfg)?;
    d.write_jsonl(&ws.path("dataset.jsonl"))?;
    ws.record("dataset.jsonl")?;
    println!("wrote {} samples (class counts {:?})", d.len(), d.class_counts());
    Ok(())
}

fn split(ws: &mut Workspace) -> Result<(), CliError> {
    let d = load_dataset_cfg(ws)?;
    let s = stratified_split(&d, ws.config.seed)?;
    ws.write_json("splits.json", &s)?;
    println!("train {} / val {} / test {}", s.train.len(), s.val.len(), s.test.len());
    Ok(())
}

#[derive(Serialize)]
struct FeatureRow<'a> {
    id: &'a str,
    entries: &'a [(u32, f64)],
}

fn featurize(ws: &mut Workspace) -> Result<(), CliError> {
    let d = load_dataset_cfg(ws)?;
    let mut bytes = Vec::new();
    for s in d.samples() {
        let f = featurize_code(&s.code, &ws.config.features)?;
        serde_json::to_writer(
            &mut bytes,
            &FeatureRow {
                id: &s.id,
                entries: f.entries(),
            },
        )
        .map_err(|e| CliError::Data(e.to_string()))?;
        bytes.push(b'\n');
    }
    ws.write_bytes("features.jsonl", &bytes)
}

#[derive(Serialize)]
struct ModelBody<'a> {
    model_id: &'a str,
    model: Option<&'a LinearModel>,
    external: bool,
}

fn train_base(ws: &mut Workspace, model_id: &str) -> Result<(), CliError> {
    let (d, splits) = load_inputs(ws)?;
    let mut model = None;
    if let Some(ext) = ws.config.external.clone() {
        for split in Split::ALL {
            let path = preds_path(&ext, model_id, split);
            if !path.exists() {
                return Err(CliError::Pending(format!("external model {model_id:?} needs {}", path.display())));
            }
            let set = read_prediction_rows(&path, model_id, split, splits.ids(split))?;
            if set.classes() != d.class_count() {
                return Err(CliError::Data(format!(
                    "{} has {} classes, dataset has {}",
                    path.display(),
                    set.classes(),
                    d.class_count()
                )));
            }
            write_preds(ws, &set)?;
        }
    } else {
        let t = table(ws, &d)?;
        let w = SampleWeights::uniform(&splits.train);
        let m = fit_builtin(&t, &splits.train, &w, &ws.config.learner)?;
        for split in Split::ALL {
            let set = predict_split(&m, model_id, &t, splits.ids(split), split)?;
            write_preds(ws, &set)?;
        }
        model = Some(m);
    }
    let body = ModelBody {
        model_id,
        model: model.as_ref(),
        external: model.is_none(),
    };
    ws.write_json(&format!("models/{model_id}.json"), &body)
}

fn bag(ws: &mut Workspace, base_id: &str) -> Result<(), CliError> {
    let (d, splits) = load_inputs(ws)?;
    let mode = ws.config.vote;
    let name = match mode {
        VoteMode::Hard => "bagging_hard",
        VoteMode::Soft => "bagging_soft",
    };
    let plan = bootstrap(&d, &splits, ws.config.members, ws.config.seed)?;
    ws.write_json(&format!("{name}/bootstrap_plan.json"), &plan)?;
    let test_truth = truth(&d, &splits.test);
    let (ensemble, sets) = if let Some(ext) = ws.config.external.clone() {
        let ids: Vec<String> = (0..plan.member_count).map(|j| member_id(base_id, j)).collect();
        let missing: Vec<String> = ids
            .iter()
            .map(|id| preds_path(&ext, id, Split::Test))
            .filter(|p| !p.exists())
            .map(|p| p.display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(CliError::Pending(format!(
                "train one member per draw in {name}/bootstrap_plan.json, then provide {}",
                missing.join(", ")
            )));
        }
        let sets = ids
            .iter()
            .map(|id| load_preds(ws, id, Split::Test, &splits.test))
            .collect::<Result<Vec<_>, _>>()?;
        (BaggingEnsemble::external(mode, base_id, &ids, plan.seed), sets)
    } else {
        let t = table(ws, &d)?;
        let e = bagging_fit(&t, &plan, &ws.config.learner, mode, base_id)?;
        let sets = e.member_sets(&t, &splits.test, Split::Test)?;
        (e, sets)
    };
    let combined = combine_sets(mode, &sets, name)?;
    let mut rows = Vec::new();
    for s in &sets {
        write_preds(ws, s)?;
        rows.push((s.model_id.clone(), evaluate_set(s, &test_truth)?));
    }
    write_preds(ws, &combined)?;
    rows.push((name.to_string(), evaluate_set(&combined, &test_truth)?));
    write_ensemble(ws, name, Ensemble::Bagging(ensemble))?;
    write_report(ws, name, Split::Test, &rows)
}

fn boost(ws: &mut Workspace, base_id: &str) -> Result<(), CliError> {
    let (d, splits) = load_inputs(ws)?;
    let k = d.class_count();
    let variant = BoostVariant::for_classes(k);
    let ids = splits.train.clone();
    let labels: Vec<Label> = ids.iter().map(|id| d.label_of(id).expect("checked")).collect();
    let test_truth = truth(&d, &splits.test);
    let name = "boosting";
    let (fit, test_sets) = if let Some(ext) = ws.config.external.clone() {
        let mut learner = ExternalRounds {
            dir: ext.clone(),
            ids: &ids,
            base_id: base_id.to_string(),
        };
        let fit = adaboost_fit(&mut learner, &ids, &labels, k, ws.config.rounds, variant, ws.config.boost_vote)?;
        let mut sets = Vec::new();
        for r in &fit.ensemble.rounds {
            let path = round_preds_path(&ext, r.t, Split::Test);
            if !path.exists() {
                return Err(CliError::Pending(format!("round {} needs {}", r.t, path.display())));
            }
            sets.push(read_prediction_rows(&path, &r.model_id, Split::Test, &splits.test)?);
        }
        (fit, sets)
    } else {
        let t = table(ws, &d)?;
        let mut learner = BuiltinRounds {
            table: &t,
            ids: &ids,
            config: ws.config.learner.clone(),
            base_id: base_id.to_string(),
        };
        let fit = adaboost_fit(&mut learner, &ids, &labels, k, ws.config.rounds, variant, ws.config.boost_vote)?;
        let sets = fit.ensemble.round_sets(&t, &splits.test, Split::Test)?;
        (fit, sets)
    };
    for (i, w) in fit.weights.iter().enumerate() {
        let csv = csv_out::boost_weights(&fit.ids, w, &fit.labels);
        ws.write_bytes(&format!("{name}/boost_weights_round_{}.csv", i + 1), csv.as_bytes())?;
    }
    let combined = fit.ensemble.combine_sets(&test_sets, name)?;
    let mut rows = Vec::new();
    for s in &test_sets {
        write_preds(ws, s)?;
        rows.push((s.model_id.clone(), evaluate_set(s, &test_truth)?));
    }
    write_preds(ws, &combined)?;
    rows.push((name.to_string(), evaluate_set(&combined, &test_truth)?));
    log::info!("boosting stopped: {:?}", fit.ensemble.stop);
    write_ensemble(ws, name, Ensemble::Boosting(fit.ensemble))?;
    write_report(ws, name, Split::Test, &rows)
}

fn base_sets(
    ws: &Workspace,
    bases: &[String],
    split: Split,
    ids: &[String],
) -> Result<Vec<PredictionSet>, CliError> {
    bases.iter().map(|b| load_preds(ws, b, split, ids)).collect()
}

fn check_bases(bases: &[String]) -> Result<(), CliError> {
    if bases.len() < 2 {
        return Err(CliError::Config("at least two --bases are needed".into()));
    }
    let unique: BTreeSet<&String> = bases.iter().collect();
    if unique.len() != bases.len() {
        return Err(CliError::Config("--bases lists a model twice".into()));
    }
    Ok(())
}

fn stack(ws: &mut Workspace, bases: &[String]) -> Result<(), CliError> {
    check_bases(bases)?;
    let (d, splits) = load_inputs(ws)?;
    let val = base_sets(ws, bases, Split::Val, &splits.val)?;
    let test = base_sets(ws, bases, Split::Test, &splits.test)?;
    let kind = ws.config.meta;
    let name = format!("stacking_{kind}");
    let model = stacking_fit(&val, &truth(&d, &splits.val), kind, &ws.config.meta_config, ws.config.seed)?;
    let combined = model.predict_sets(&test, &name)?;
    let test_truth = truth(&d, &splits.test);
    let mut rows = Vec::new();
    for s in &test {
        rows.push((s.model_id.clone(), evaluate_set(s, &test_truth)?));
    }
    write_preds(ws, &combined)?;
    rows.push((name.clone(), evaluate_set(&combined, &test_truth)?));
    write_ensemble(ws, &name, Ensemble::Stacking(model))?;
    write_report(ws, &name, Split::Test, &rows)
}

fn dgs(ws: &mut Workspace, bases: &[String]) -> Result<(), CliError> {
    check_bases(bases)?;
    let (d, splits) = load_inputs(ws)?;
    let t = table(ws, &d)?;
    let val = base_sets(ws, bases, Split::Val, &splits.val)?;
    let test = base_sets(ws, bases, Split::Test, &splits.test)?;
    let cfg = DgsConfig {
        routing: ws.config.routing,
        gate: ws.config.gate.clone(),
    };
    let name = format!("dgs_{}", serde_json::to_value(cfg.routing).expect("enum").as_str().expect("string tag"));
    let gate = dgs_fit(&val, &truth(&d, &splits.val), &t, &cfg, ws.config.seed)?;
    let (combined, chosen) = gate.predict_sets(&test, &t, &name)?;
    let mut routes = csv::Writer::from_writer(Vec::new());
    routes
        .write_record(["id", "expert"])
        .map_err(|e| CliError::Data(e.to_string()))?;
    for (id, j) in &chosen {
        routes
            .write_record([id.as_str(), bases[*j].as_str()])
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    let routes = routes.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    ws.write_bytes(&format!("{name}/routes.csv"), &routes)?;
    let test_truth = truth(&d, &splits.test);
    let mut rows = Vec::new();
    for s in &test {
        rows.push((s.model_id.clone(), evaluate_set(s, &test_truth)?));
    }
    write_preds(ws, &combined)?;
    rows.push((name.clone(), evaluate_set(&combined, &test_truth)?));
    write_ensemble(ws, &name, Ensemble::Dgs(gate))?;
    write_report(ws, &name, Split::Test, &rows)
}

fn eval(ws: &mut Workspace, models: &[String], split: Split) -> Result<(), CliError> {
    let (d, splits) = load_inputs(ws)?;
    let ids = splits.ids(split);
    let t = truth(&d, ids);
    let mut rows = Vec::new();
    for m in models {
        let set = load_preds(ws, m, split, ids)?;
        rows.push((m.clone(), evaluate_set(&set, &t)?));
    }
    write_report(ws, "", split, &rows)
}

/// Reads `instance,method,<metric>...` rows into a complete score grid.
pub fn read_score_csv(path: &Path) -> Result<ScoreTable, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .clone();
    if header.len() < 3 || &header[0] != "instance" || &header[1] != "method" {
        return Err(CliError::Data(format!(
            "{}: header must be instance,method,<metric>...",
            path.display()
        )));
    }
    let metrics: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut instances: Vec<String> = Vec::new();
    let mut methods: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let pos = |list: &mut Vec<String>, v: &str| match list.iter().position(|x| x == v) {
            Some(i) => i,
            None => {
                list.push(v.to_string());
                list.len() - 1
            }
        };
        let i = pos(&mut instances, &rec[0]);
        let m = pos(&mut methods, &rec[1]);
        let values = rec
            .iter()
            .skip(2)
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Data(format!("{} row {}: {e}", path.display(), line + 2)))?;
        if cells.insert((i, m), values).is_some() {
            return Err(CliError::Data(format!(
                "{}: duplicate row for {} / {}",
                path.display(),
                &rec[0],
                &rec[1]
            )));
        }
    }
    let mut values = vec![vec![vec![0.0; methods.len()]; instances.len()]; metrics.len()];
    for i in 0..instances.len() {
        for m in 0..methods.len() {
            let row = cells.get(&(i, m)).ok_or_else(|| {
                CliError::Data(format!("{}: no row for {} / {}", path.display(), instances[i], methods[m]))
            })?;
            for (k, v) in row.iter().enumerate() {
                values[k][i][m] = *v;
            }
        }
    }
    Ok(ScoreTable {
        methods,
        instances,
        metrics,
        values,
    })
}

fn rank(ws: &mut Workspace, scores: &Path, tie: TieRule) -> Result<(), CliError> {
    let table = read_score_csv(scores)?;
    let ranks = average_rank(&table, tie)?;
    ws.write_bytes("ranks.csv", csv_out::ranks(&ranks).as_bytes())?;
    ws.write_json("ranks.json", &ranks)
}

fn overlap(ws: &mut Workspace, models: &[String], split: Split) -> Result<(), CliError> {
    if models.is_empty() || models.len() > MAX_OVERLAP_SETS {
        return Err(CliError::Config(format!("overlap takes 1 to {MAX_OVERLAP_SETS} models")));
    }
    let (d, splits) = load_inputs(ws)?;
    let ids = splits.ids(split);
    let t = truth(&d, ids);
    let sets = models
        .iter()
        .map(|m| Ok(correct_ids(&load_preds(ws, m, split, ids)?, &t)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let regions = overlap_regions(&sets)?;
    ws.write_bytes("overlap.csv", csv_out::overlap(&regions, sets.len()).as_bytes())
}

fn divergence_cmd(ws: &mut Workspace, members: &[String], methods: &[String], split: Split) -> Result<(), CliError> {
    let (d, splits) = load_inputs(ws)?;
    let ids = splits.ids(split);
    let t = truth(&d, ids);
    let m = base_sets(ws, members, split, ids)?;
    let e = base_sets(ws, methods, split, ids)?;
    let report = divergence(&m, &e, &t)?;
    println!("{} of {} samples are divergent", report.divergent_ids.len(), report.total);
    ws.write_bytes("divergence.csv", csv_out::divergence(&report).as_bytes())?;
    ws.write_json("divergence.json", &report)
}

#[derive(Serialize)]
struct SubsetSummary {
    cwe: String,
    vulnerable: usize,
    samples: usize,
    path: String,
}

#[derive(Serialize)]
struct SubsetsBody {
    subsets: Vec<SubsetSummary>,
}

fn cwe_subsets(ws: &mut Workspace, top: usize) -> Result<(), CliError> {
    let d = load_dataset_cfg(ws)?;
    let mut subsets = Vec::new();
    for (cwe, vulnerable) in cwe_frequencies(&d).into_iter().take(top) {
        let sub = cwe_subset(&d, &cwe)?;
        let rel = format!("cwe/{cwe}/dataset.jsonl");
        sub.write_jsonl(&ws.path(&rel))?;
        ws.record(&rel)?;
        subsets.push(SubsetSummary {
            cwe,
            vulnerable,
            samples: sub.len(),
            path: rel,
        });
    }
    ws.write_json("cwe/subsets.json", &SubsetsBody { subsets })
}

