use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::Axis;

use mlgc::condense::{self, CondenseConfig};
use mlgc::eval::{class_distribution_report, label_correlation, train_eval_pipeline, EvalConfig, TrainingData};
use mlgc::init::{InitKind, InitStrategy};
use mlgc::io::{format_csv, format_trace_csv, load_dataset, load_synthetic, save_dataset, save_synthetic};
use mlgc::losses::{positive_class_weights, LossKind, LossSpec};
use mlgc::models::Architecture;
use mlgc::planted::{make_planted_dataset, PlantedConfig};
use mlgc::{Error, LabeledGraph, Result, SplitRole, StructureMode};

use crate::manifest::{hash_dataset, hash_file, RunManifest};
use crate::{CondenseArgs, EvalArgs, InspectArgs, MakeDataArgs, ModelArg, Profile};

/// Creates `dir` and refuses to clobber any of `outputs` without `--force`.
fn prepare_out(dir: &Path, outputs: &[&str], force: bool) -> Result<()> {
    if !force {
        if let Some(existing) = outputs.iter().map(|o| dir.join(o)).find(|p| p.exists()) {
            return Err(Error::Config(format!("{} already exists; pass --force to overwrite", existing.display())));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn loss_spec(kind: LossKind, weighted: bool, graph: &LabeledGraph) -> LossSpec {
    let mut spec = LossSpec::new(kind);
    if weighted {
        let train = graph.split_mask(SplitRole::Train).indices;
        spec.class_weights = Some(positive_class_weights(&graph.labels().select(Axis(0), &train)));
        spec.classwise = true;
    }
    spec
}

pub fn make_data(args: &MakeDataArgs) -> Result<()> {
    let out = &args.shared.out;
    prepare_out(out, &["meta.json", "edges.tsv", "features.tsv", "labels.tsv", "split.tsv"], args.shared.force)?;
    let cfg = PlantedConfig {
        nodes: args.nodes,
        classes: args.classes,
        overlap: args.overlap,
        p_in: args.p_in,
        p_out: args.p_out,
        feature_dim: args.feature_dim,
        seed: args.shared.seed,
    };
    let dataset = make_planted_dataset(&cfg)?;
    save_dataset(out, &dataset.graph)
}

fn condense_config(args: &CondenseArgs, graph: &LabeledGraph) -> Result<CondenseConfig> {
    let (mut init, mut loss) = (args.init.map(InitKind::from), args.loss.map(LossKind::from));
    if args.profile == Some(Profile::PaperBest) {
        let conflicts = [
            init.is_some_and(|i| i != InitKind::KCenter),
            loss.is_some_and(|l| l != LossKind::Bce),
            args.no_structure,
        ];
        if conflicts.iter().any(|&c| c) {
            return Err(Error::Config("--profile paper-best fixes kcenter, bce and a learned structure".into()));
        }
        init = Some(InitKind::KCenter);
        loss = Some(LossKind::Bce);
    }
    let structure_mode = if args.no_structure { StructureMode::Graphless } else { StructureMode::Learned };
    let cfg = CondenseConfig {
        method: args.method.into(),
        c_rate: args.c_rate,
        outer_restarts: args.outer,
        inner_steps: args.inner,
        feature_steps: args.tau1,
        structure_steps: args.tau2.unwrap_or(if args.no_structure { 0 } else { 5 }),
        model_steps: args.tau_theta,
        eta_features: args.eta1,
        eta_structure: args.eta2,
        eta_model: args.eta_theta,
        loss: loss_spec(loss.unwrap_or(LossKind::Bce), args.weighted, graph),
        init: InitStrategy {
            kind: init.unwrap_or(InitKind::KCenter),
            use_subgraph_structure: false,
            seed: args.shared.seed,
        },
        structure_mode,
        sgdd_alpha: args.alpha,
        sgdd_beta: args.beta,
        delta: args.delta,
        seed: args.shared.seed,
        surrogate: Architecture::Gcn2 { hidden: args.hidden },
        generator_hidden: args.hidden,
        ..CondenseConfig::default()
    };
    cfg.validate(graph.k())?;
    Ok(cfg)
}

pub fn condense(args: &CondenseArgs, argv: &[String]) -> Result<()> {
    let graph = load_dataset(&args.data)?;
    let cfg = condense_config(args, &graph)?;
    let out = &args.shared.out;
    prepare_out(out, &["synthetic", "trace.csv", "manifest.json"], args.shared.force)?;

    let mut manifest = RunManifest::new("condense", argv, cfg.seed, serde_json::to_value(&cfg)?);
    manifest.input_hashes.insert("data".into(), hash_dataset(&args.data)?);
    let manifest_path = out.join("manifest.json");
    manifest.write(&manifest_path)?;

    let started = Instant::now();
    let (synthetic, trace) = match condense::condense(&graph, &cfg) {
        Ok(result) => result,
        Err(err) => {
            manifest.status = "failed";
            manifest.write(&manifest_path)?;
            return Err(err);
        }
    };
    let synthetic_dir = out.join("synthetic");
    save_synthetic(&synthetic_dir, &synthetic)?;
    let trace_path = out.join("trace.csv");
    fs::write(&trace_path, format_trace_csv(&trace))?;

    manifest.outputs.insert("synthetic".into(), hash_dataset(&synthetic_dir)?);
    manifest.outputs.insert("trace.csv".into(), hash_file(&trace_path)?);
    manifest.status = "complete";
    manifest.wall_seconds = Some(started.elapsed().as_secs_f64());
    manifest.write(&manifest_path)
}

pub fn eval(args: &EvalArgs, argv: &[String]) -> Result<()> {
    let graph = load_dataset(&args.data)?;
    let synthetic = args.synthetic.as_deref().map(load_synthetic).transpose()?;
    let architecture = match args.model {
        ModelArg::Gcn => Architecture::Gcn2 { hidden: args.hidden },
        ModelArg::Sgc => Architecture::Sgc { hops: args.hops },
    };
    let loss_kind: LossKind = args.loss.into();
    let cfg = EvalConfig {
        architecture,
        loss: loss_spec(loss_kind, args.weighted, &graph),
        epochs: args.epochs,
        learning_rate: args.lr,
        seeds: (args.shared.seed..args.shared.seed + args.seeds).collect(),
        jobs: args.shared.jobs,
        force_positive: !args.no_force_positive,
    };
    if cfg.seeds.is_empty() || cfg.epochs == 0 || !(cfg.learning_rate > 0.0) || cfg.jobs == 0 {
        return Err(Error::Config("--seeds, --epochs, --lr and --jobs must be positive".into()));
    }
    let out = &args.shared.out;
    prepare_out(out, &["report.json", "manifest.json"], args.shared.force)?;

    let mut manifest = RunManifest::new("eval", argv, args.shared.seed, serde_json::to_value(&cfg)?);
    manifest.input_hashes.insert("data".into(), hash_dataset(&args.data)?);
    if let Some(dir) = &args.synthetic {
        manifest.input_hashes.insert("synthetic".into(), hash_dataset(dir)?);
    }
    let manifest_path = out.join("manifest.json");
    manifest.write(&manifest_path)?;

    let started = Instant::now();
    let data = match &synthetic {
        Some(s) => TrainingData::Synthetic(s),
        None => TrainingData::Whole,
    };
    let report = train_eval_pipeline(&graph, data, &cfg)?;
    let report_path = out.join("report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")?;

    manifest.outputs.insert("report.json".into(), hash_file(&report_path)?);
    manifest.status = "complete";
    manifest.wall_seconds = Some(started.elapsed().as_secs_f64());
    manifest.write(&manifest_path)
}

pub fn inspect(args: &InspectArgs) -> Result<()> {
    let graph = load_dataset(&args.data)?;
    let synthetic = args.synthetic.as_deref().map(load_synthetic).transpose()?;
    let out = &args.shared.out;
    prepare_out(out, &["correlation.csv", "distribution.csv"], args.shared.force)?;

    let k = graph.k();
    let class_names: Vec<String> = (0..k).map(|c| format!("class_{c}")).collect();
    let mut header = vec!["graph".to_string(), "class".to_string()];
    header.extend(class_names.iter().cloned());
    let mut sources = vec![("original", graph.labels().clone())];
    if let Some(s) = &synthetic {
        sources.push(("synthetic", s.labels().clone()));
    }
    let mut text = header.join(",") + "\n";
    for (name, labels) in &sources {
        let (p, _) = label_correlation(labels)?;
        for (c, row) in p.rows().into_iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            text.push_str(&format!("{name},{c},{}\n", cells.join(",")));
        }
    }
    fs::write(out.join("correlation.csv"), text)?;

    let synthetic_labels = synthetic.as_ref().map(|s| s.labels().clone());
    let (original, paired) = class_distribution_report(graph.labels(), synthetic_labels.as_ref().unwrap_or(graph.labels()))?;
    let mut header = vec!["class".to_string(), "original".to_string()];
    let rows: Vec<Vec<f64>> = if synthetic.is_some() {
        header.push("synthetic".into());
        (0..k).map(|c| vec![c as f64, original[c], paired[c]]).collect()
    } else {
        (0..k).map(|c| vec![c as f64, original[c]]).collect()
    };
    fs::write(out.join("distribution.csv"), format_csv(&header, &rows))?;
    Ok(())
}
