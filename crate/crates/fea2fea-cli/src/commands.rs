//! Command implementations. Every command creates its run directory,
//! echoes the effective configuration to `config.json`, writes its outputs
//! there, and returns a one-line summary for stdout.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use fea2fea::application::{
    classify_graphs, classify_nodes, save_embeddings_tsv, synthetic_degree_collection,
    ApplicationModel, AugmentConfig, GraphPooling, GraphTask, NodeTask, Readout,
};
use fea2fea::features::{build_feature_matrix, save_feature_matrix, Feature, NUM_FEATURES};
use fea2fea::graph::{
    generate_random_geometric, load_edge_list, load_tudataset, save_edge_list, Graph,
    GraphCollection, NodeDataset,
};
use fea2fea::multiple::{
    enumerate_combinations, filter_combinations, summarize, train_multi, CombinationResult,
    ConcatMethod, FeatureCombination, DEFAULT_EMBED_DIM, DEFAULT_THRESHOLD,
};
use fea2fea::nn::{fit, ConvType, LayerConfig, Supervision, TrainSettings};
use fea2fea::seeds::{child_seed, tags};
use fea2fea::single::{
    build_correlation_matrix, prepare_collection_data, prepare_node_data, train_pair,
    CorrelationMatrix, PairOutcome, PairTask, PreparedData, DEFAULT_SPLIT_RATIOS,
};
use fea2fea::{binning, par, Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const DEFAULT_SYNTH_NODES: usize = 400;

/// Which dataset the config points at.
enum Source {
    Edges(PathBuf),
    Tudataset { dir: PathBuf, name: String },
    SynthNode { n: usize },
    SynthGraphs { num_graphs: usize, n: usize },
}

fn pick_source(cfg: &RunConfig) -> Result<Source> {
    let mut found = Vec::new();
    if let Some(p) = &cfg.edges {
        found.push(Source::Edges(p.clone()));
    }
    if let Some(dir) = &cfg.tudataset {
        let name = cfg.dataset_name.clone().ok_or_else(|| {
            Error::InvalidConfig("tudataset directory needs dataset_name".into())
        })?;
        found.push(Source::Tudataset { dir: dir.clone(), name });
    }
    match (cfg.synth_graphs, cfg.synth_n) {
        (Some(g), n) if g > 0 => found.push(Source::SynthGraphs {
            num_graphs: g,
            n: n.unwrap_or(DEFAULT_SYNTH_NODES),
        }),
        (_, Some(n)) => found.push(Source::SynthNode { n }),
        _ => {}
    }
    match found.len() {
        0 => Err(Error::InvalidConfig(
            "no dataset source: set edges, tudataset, or synth_n/synth_graphs".into(),
        )),
        1 => Ok(found.into_iter().next().unwrap()),
        _ => Err(Error::InvalidConfig(
            "ambiguous dataset source: set only one of edges, tudataset, synth".into(),
        )),
    }
}

fn root_seed(cfg: &RunConfig) -> u64 {
    cfg.seed.unwrap_or(7)
}

fn synth_node_graph(cfg: &RunConfig, n: usize) -> Result<Graph> {
    let seed = child_seed(root_seed(cfg), &[tags::SYNTH_GRAPH, 0]);
    match cfg.radius {
        Some(r) => generate_random_geometric(n, r, seed),
        None => {
            let r = fea2fea::graph::default_geometric_radius(n);
            generate_random_geometric(n, r, seed)
        }
    }
}

fn dataset_label(cfg: &RunConfig, source: &Source) -> String {
    if let Some(name) = &cfg.dataset_name {
        return name.clone();
    }
    match source {
        Source::Edges(p) => p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "edges".into()),
        Source::Tudataset { name, .. } => name.clone(),
        Source::SynthNode { n } => format!("synthetic-n{n}"),
        Source::SynthGraphs { num_graphs, n } => format!("synthetic-g{num_graphs}-n{n}"),
    }
}

fn load_collection(cfg: &RunConfig, source: &Source) -> Result<GraphCollection> {
    match source {
        Source::Tudataset { dir, name } => load_tudataset(dir, name),
        Source::SynthGraphs { num_graphs, n } => {
            synthetic_degree_collection(*num_graphs, *n, cfg.radius, 2, root_seed(cfg))
        }
        _ => Err(Error::InvalidConfig(
            "this command needs a graph collection (tudataset or synth_graphs)".into(),
        )),
    }
}

fn load_node_graph(cfg: &RunConfig, source: &Source) -> Result<Graph> {
    match source {
        Source::Edges(p) => load_edge_list(p, None),
        Source::SynthNode { n } => synth_node_graph(cfg, *n),
        _ => Err(Error::InvalidConfig(
            "this command needs a single graph (edges or synth_n)".into(),
        )),
    }
}

fn load_node_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        labels.push(line.parse::<usize>().map_err(|_| {
            Error::parse(path, lineno + 1, format!("expected a class index, got {line:?}"))
        })?);
    }
    Ok(labels)
}

fn ratios(cfg: &RunConfig) -> (f64, f64, f64) {
    (
        cfg.train_ratio.unwrap_or(DEFAULT_SPLIT_RATIOS.0),
        cfg.val_ratio.unwrap_or(DEFAULT_SPLIT_RATIOS.1),
        cfg.test_ratio.unwrap_or(DEFAULT_SPLIT_RATIOS.2),
    )
}

fn layer_config(cfg: &RunConfig, default_conv: ConvType) -> Result<LayerConfig> {
    let conv = match &cfg.conv {
        Some(s) => ConvType::from_str(s)?,
        None => default_conv,
    };
    let mut lc = LayerConfig::new(conv, 1, 2);
    if let Some(h) = cfg.hidden {
        lc.hidden_dim = h;
    }
    if let Some(d) = cfg.depth {
        lc.depth = d;
    }
    if let Some(p) = cfg.dropout {
        lc.dropout_p = p;
    }
    if let Some(b) = cfg.batchnorm {
        lc.use_batchnorm = b;
    }
    if let Some(s) = cfg.skip {
        lc.use_skip = s;
    }
    Ok(lc)
}

fn train_settings(cfg: &RunConfig) -> Result<TrainSettings> {
    let mut s = TrainSettings::default();
    if let Some(e) = cfg.epochs {
        s.max_epochs = e;
    }
    if let Some(p) = cfg.patience {
        s.patience = p;
    }
    if let Some(lr) = cfg.lr {
        s.lr = lr;
    }
    if let Some(wd) = cfg.weight_decay {
        s.weight_decay = wd;
    }
    s.validate()?;
    Ok(s)
}

fn parse_members(spec: &str) -> Result<Vec<usize>> {
    let mut members: Vec<usize> = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| Feature::from_str(s).map(|f| f.index()))
        .collect::<Result<_>>()?;
    members.sort_unstable();
    members.dedup();
    Ok(members)
}

fn parse_methods(spec: Option<&str>, default: ConcatMethod) -> Result<Vec<ConcatMethod>> {
    match spec {
        None => Ok(vec![default]),
        Some("all") => Ok(ConcatMethod::ALL.to_vec()),
        Some(s) => Ok(vec![ConcatMethod::from_str(s)?]),
    }
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    cfg.save(&out.join("config.json"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn configure_jobs(cfg: &RunConfig) -> Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(jobs) = cfg.jobs {
        if jobs == 0 {
            return Err(Error::InvalidConfig("jobs must be at least 1".into()));
        }
        // Ignore the error from a pool that already exists (tests call
        // commands repeatedly in one process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    if cfg.jobs.is_some_and(|j| j == 0) {
        return Err(Error::InvalidConfig("jobs must be at least 1".into()));
    }
    Ok(())
}

fn prepared_data(cfg: &RunConfig, source: &Source) -> Result<PreparedData> {
    match source {
        Source::Edges(_) | Source::SynthNode { .. } => {
            let graph = load_node_graph(cfg, source)?;
            prepare_node_data(&graph, ratios(cfg), root_seed(cfg))
        }
        _ => {
            let coll = load_collection(cfg, source)?;
            prepare_collection_data(&coll, ratios(cfg), root_seed(cfg))
        }
    }
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<String> {
    prepare_out(out, cfg)?;
    let n = cfg.synth_n.unwrap_or(DEFAULT_SYNTH_NODES);
    let num_graphs = cfg.synth_graphs.unwrap_or(1).max(1);
    let radius = cfg.radius.unwrap_or_else(|| fea2fea::graph::default_geometric_radius(n));
    for i in 0..num_graphs {
        let g = generate_random_geometric(n, radius, child_seed(root_seed(cfg), &[tags::SYNTH_GRAPH, i as u64]))?;
        save_edge_list(&g, &out.join(format!("graph_{i:03}.tsv")))?;
    }
    Ok(format!(
        "synth: {num_graphs} graph(s) with {n} nodes (radius {radius:.6}) -> {}",
        out.display()
    ))
}

pub fn features(cfg: &RunConfig, out: &Path) -> Result<String> {
    prepare_out(out, cfg)?;
    configure_jobs(cfg)?;
    let source = pick_source(cfg)?;
    let matrix = match &source {
        Source::Edges(_) | Source::SynthNode { .. } => {
            build_feature_matrix(&load_node_graph(cfg, &source)?)?
        }
        _ => fea2fea::features::build_collection_features(&load_collection(cfg, &source)?)?,
    };
    let path = out.join("features.tsv");
    save_feature_matrix(&matrix, &path)?;
    Ok(format!(
        "features: {} nodes x {NUM_FEATURES} columns -> {}",
        matrix.num_nodes(),
        path.display()
    ))
}

pub fn single(cfg: &RunConfig, out: &Path) -> Result<String> {
    prepare_out(out, cfg)?;
    configure_jobs(cfg)?;
    let source = pick_source(cfg)?;
    let data = prepared_data(cfg, &source)?;
    let base_cfg = layer_config(cfg, ConvType::Gin)?;
    let bins = cfg.bins.unwrap_or(binning::DEFAULT_NUM_BINS);
    let settings = train_settings(cfg)?;
    let seeds = cfg.seeds();
    let label = dataset_label(cfg, &source);
    let matrix = build_correlation_matrix(&data, &base_cfg, bins, &seeds, &settings, &label)?;
    write_text(&out.join("matrix.csv"), &matrix.to_csv())?;
    write_text(&out.join("matrix.json"), &matrix.to_json()?)?;
    Ok(format!(
        "single: 5x5 matrix on {label} (bins={bins}, seeds={}) -> matrix.csv, matrix.json",
        seeds.len()
    ))
}

fn combination_rows_csv(results: &[CombinationResult]) -> String {
    let mut csv = String::from("target,k,members,method,mean,std\n");
    for r in results {
        let members: Vec<&str> = r
            .combination
            .members
            .iter()
            .map(|&i| Feature::from_index(i).map(|f| f.name()).unwrap_or("?"))
            .collect();
        let target = Feature::from_index(r.combination.target).map(|f| f.name()).unwrap_or("?");
        csv.push_str(&format!(
            "{target},{},{},{},{:.6},{:.6}\n",
            r.combination.k(),
            members.join("+"),
            r.concat_method,
            r.mean,
            r.std
        ));
    }
    csv
}

pub fn multiple(cfg: &RunConfig, out: &Path) -> Result<String> {
    prepare_out(out, cfg)?;
    configure_jobs(cfg)?;
    let source = pick_source(cfg)?;
    let data = prepared_data(cfg, &source)?;
    let target = Feature::from_str(cfg.target.as_deref().unwrap_or("deg"))?;
    let threshold = cfg.threshold.unwrap_or(DEFAULT_THRESHOLD);
    let all = enumerate_combinations(NUM_FEATURES, target.index())?;
    let total = all.len();
    let (surviving, filtered_note) = match &cfg.matrix {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let r = CorrelationMatrix::from_json(&text)?;
            let kept = filter_combinations(&all, &r, threshold);
            (kept, format!("threshold {threshold}"))
        }
        None => (all, "no matrix, unfiltered".to_string()),
    };
    let methods = parse_methods(cfg.method.as_deref(), ConcatMethod::Ntn)?;
    let base_cfg = layer_config(cfg, ConvType::Gin)?;
    let embed_dim = cfg.embed_dim.unwrap_or(DEFAULT_EMBED_DIM);
    let bins = cfg.bins.unwrap_or(binning::DEFAULT_NUM_BINS);
    let seeds = cfg.seeds();
    let settings = train_settings(cfg)?;

    let jobs: Vec<(FeatureCombination, ConcatMethod)> = surviving
        .iter()
        .flat_map(|c| methods.iter().map(move |&m| (c.clone(), m)))
        .collect();
    let results: Result<Vec<CombinationResult>> = par::map_items(&jobs, |(comb, method)| {
        train_multi(comb, *method, &data, &base_cfg, embed_dim, bins, &seeds, &settings)
    })
    .into_iter()
    .collect();
    let results = results?;

    write_text(&out.join("combinations.csv"), &combination_rows_csv(&results))?;
    write_text(
        &out.join("combinations.json"),
        &serde_json::to_string_pretty(&results).expect("results serialize"),
    )?;
    let mut summary_csv = String::from("k,mean,std,count\n");
    for row in summarize(&results) {
        summary_csv.push_str(&format!("{},{:.6},{:.6},{}\n", row.k, row.mean, row.std, row.count));
    }
    write_text(&out.join("summary.csv"), &summary_csv)?;
    Ok(format!(
        "multiple: target {} kept {}/{total} combinations ({filtered_note}) x {} method(s) -> combinations.csv",
        target.name(),
        surviving.len(),
        methods.len()
    ))
}

fn augment_config(cfg: &RunConfig, default_conv: ConvType) -> Result<AugmentConfig> {
    let members = parse_members(cfg.members.as_deref().unwrap_or(""))?;
    let method = match cfg.method.as_deref() {
        None => ConcatMethod::Simple,
        Some("all") => {
            return Err(Error::InvalidConfig(
                "classify takes a single concatenation method".into(),
            ))
        }
        Some(s) => ConcatMethod::from_str(s)?,
    };
    let mut ac = AugmentConfig::new(members, method, default_conv);
    if let Some(d) = cfg.embed_dim {
        ac.embed_dim = d;
    }
    if let Some(r) = &cfg.readout {
        ac.readout = Readout::from_str(r)?;
    }
    // Backbone overrides reuse the generic model flags.
    let lc = layer_config(cfg, default_conv)?;
    ac.gnn.conv_type = lc.conv_type;
    if cfg.hidden.is_some() {
        ac.gnn.hidden_dim = lc.hidden_dim;
    }
    if cfg.depth.is_some() {
        ac.gnn.depth = lc.depth;
    }
    if cfg.dropout.is_some() {
        ac.gnn.dropout_p = lc.dropout_p;
    }
    if cfg.batchnorm.is_some() {
        ac.gnn.use_batchnorm = lc.use_batchnorm;
    }
    if cfg.skip.is_some() {
        ac.gnn.use_skip = lc.use_skip;
    }
    ac.validate()?;
    Ok(ac)
}

fn node_task(cfg: &RunConfig, source: &Source) -> Result<NodeTask> {
    let label = dataset_label(cfg, source);
    let graph = load_node_graph(cfg, source)?;
    let mut ds = NodeDataset::from_graph(graph);
    match (&cfg.labels, source) {
        (Some(path), _) => {
            let labels = load_node_labels(path)?;
            if labels.len() != ds.graph.num_nodes() {
                return Err(Error::InvalidConfig(format!(
                    "{} labels for {} nodes",
                    labels.len(),
                    ds.graph.num_nodes()
                )));
            }
            ds.node_labels = Some(labels);
        }
        (None, Source::SynthNode { .. }) => {
            // Demo labels: the binned degree of each node.
            let features = build_feature_matrix(&ds.graph)?;
            let deg = features.column(Feature::Deg);
            let spec = binning::fit_bins(&deg, 2, binning::BinStrategy::EqualFrequency)?;
            ds.node_labels = Some(binning::apply_bins(&deg, &spec));
        }
        (None, _) => {
            return Err(Error::InvalidConfig(
                "node classification needs a labels file".into(),
            ))
        }
    }
    NodeTask::from_dataset(&label, &ds, ratios(cfg), root_seed(cfg))
}

pub fn classify(cfg: &RunConfig, out: &Path) -> Result<String> {
    prepare_out(out, cfg)?;
    configure_jobs(cfg)?;
    let source = pick_source(cfg)?;
    let graph_mode = match cfg.mode.as_deref() {
        Some("graph") => true,
        Some("node") => false,
        Some(other) => {
            return Err(Error::InvalidConfig(format!(
                "unknown mode '{other}' (expected node or graph)"
            )))
        }
        None => matches!(source, Source::Tudataset { .. } | Source::SynthGraphs { .. }),
    };
    let seeds = cfg.seeds();
    let settings = train_settings(cfg)?;
    let (report, mode_name) = if graph_mode {
        let coll = load_collection(cfg, &source)?;
        let task = GraphTask::from_collection(&dataset_label(cfg, &source), &coll)?;
        let ac = augment_config(cfg, ConvType::Gin)?;
        let report = classify_graphs(&task, &ac, &seeds, &settings)?;
        export_graph_embeddings(&task, &ac, seeds[0], out)?;
        (report, "graph")
    } else {
        let task = node_task(cfg, &source)?;
        let ac = augment_config(cfg, ConvType::Gcn)?;
        let report = classify_nodes(&task, &ac, &seeds, &settings)?;
        export_node_embeddings(&task, &ac, seeds[0], &settings, out)?;
        (report, "node")
    };
    write_text(&out.join("report.json"), &(report.to_json() + "\n"))?;
    Ok(format!(
        "classify: {mode_name} accuracy {:.4} +/- {:.4} over {} seed(s) -> report.json",
        report.mean,
        report.std,
        seeds.len()
    ))
}

/// Re-trains the first seed's model and saves its eval-mode pre-head
/// activations; the training path is identical to the reported run.
fn export_node_embeddings(
    task: &NodeTask,
    ac: &AugmentConfig,
    seed: u64,
    settings: &TrainSettings,
    out: &Path,
) -> Result<()> {
    let columns: Result<Vec<_>> = ac
        .members
        .iter()
        .map(|&i| {
            let col = task.data.features.column(Feature::from_index(i)?);
            fea2fea::tensor::Tensor::matrix(col.len(), 1, col)
        })
        .collect();
    let mut model = ApplicationModel::new(
        columns?,
        task.initial.clone(),
        task.num_classes,
        ac,
        None,
        child_seed(seed, &[tags::APPLICATION_TASK]),
    )?;
    let sup = Supervision {
        labels: task.labels.clone(),
        num_classes: task.num_classes,
        train_idx: task.data.masks.train_indices(),
        val_idx: task.data.masks.val_indices(),
        test_idx: task.data.masks.test_indices(),
    };
    fit(&mut model, &task.data.graph, &sup, settings)?;
    let emb = model.embeddings(&task.data.graph)?;
    save_embeddings_tsv(&out.join("embeddings.tsv"), &emb)
}

/// Saves pooled graph embeddings from a freshly initialized first-fold
/// model (training embeddings per fold would be ambiguous).
fn export_graph_embeddings(task: &GraphTask, ac: &AugmentConfig, seed: u64, out: &Path) -> Result<()> {
    let columns: Result<Vec<_>> = ac
        .members
        .iter()
        .map(|&i| {
            let col = task.features.column(Feature::from_index(i)?);
            fea2fea::tensor::Tensor::matrix(col.len(), 1, col)
        })
        .collect();
    let pooling = GraphPooling {
        readout: ac.readout,
        segments: task.union.node_graph.clone(),
        num_graphs: task.num_graphs(),
    };
    let mut model = ApplicationModel::new(
        columns?,
        task.initial.clone(),
        task.num_classes,
        ac,
        Some(pooling),
        child_seed(seed, &[tags::APPLICATION_TASK, 0]),
    )?;
    let emb = model.embeddings(&task.union.graph)?;
    save_embeddings_tsv(&out.join("embeddings.tsv"), &emb)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub param: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct SweepSpec {
    pub param: String,
    pub range: Option<String>,
    pub values: Option<String>,
    pub step: Option<f64>,
    pub resume: bool,
}

fn parse_range(range: &str) -> Result<(f64, f64)> {
    let (a, b) = range
        .split_once("..")
        .ok_or_else(|| Error::InvalidConfig(format!("range '{range}' is not 'start..end'")))?;
    let lo: f64 = a.trim().parse().map_err(|_| Error::InvalidConfig(format!("bad range start '{a}'")))?;
    let hi: f64 = b.trim().parse().map_err(|_| Error::InvalidConfig(format!("bad range end '{b}'")))?;
    if hi < lo {
        return Err(Error::InvalidConfig(format!("range '{range}' is descending")));
    }
    Ok((lo, hi))
}

fn sweep_values(spec: &SweepSpec) -> Result<Vec<f64>> {
    if spec.range.is_some() && spec.values.is_some() {
        return Err(Error::InvalidConfig("give either range or values, not both".into()));
    }
    if let Some(vs) = &spec.values {
        let vals: Result<Vec<f64>> = vs
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidConfig(format!("bad value '{s}'")))
            })
            .collect();
        let vals = vals?;
        if vals.is_empty() {
            return Err(Error::InvalidConfig("empty value list".into()));
        }
        return Ok(vals);
    }
    if let Some(r) = &spec.range {
        let (lo, hi) = parse_range(r)?;
        let step = spec.step.unwrap_or(1.0);
        if step <= 0.0 {
            return Err(Error::InvalidConfig("step must be positive".into()));
        }
        let mut vals = Vec::new();
        let mut i = 0u32;
        loop {
            let v = lo + step * i as f64;
            if v > hi + 1e-9 {
                break;
            }
            vals.push(v);
            i += 1;
        }
        return Ok(vals);
    }
    // Documented defaults per parameter.
    Ok(match spec.param.as_str() {
        "bins" => (2..=10).map(|v| v as f64).collect(),
        "depth" => [2.0, 4.0, 6.0, 8.0, 10.0].to_vec(),
        "threshold" => [0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95, 1.0].to_vec(),
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown sweep parameter '{other}' (expected bins, depth or threshold)"
            )))
        }
    })
}

fn cell_path(out: &Path, param: &str, value: f64) -> PathBuf {
    out.join("cells").join(format!("{param}-{value}.json"))
}

fn pair_accuracy(
    cfg: &RunConfig,
    data: &PreparedData,
    base_cfg: &LayerConfig,
    bins: usize,
) -> Result<(f64, f64)> {
    let input = Feature::from_str(cfg.input.as_deref().unwrap_or("pr"))?;
    let output = Feature::from_str(cfg.output.as_deref().unwrap_or("avglen"))?;
    let settings = train_settings(cfg)?;
    let seeds = cfg.seeds();
    let runs: Result<Vec<f64>> = par::map_items(&seeds, |&seed| {
        let mut task = PairTask::new(input, output, base_cfg.clone(), seed)?;
        task.num_bins = bins;
        match train_pair(&task, data, &settings)? {
            PairOutcome::Trained { accuracy } => Ok(accuracy),
            PairOutcome::Excluded { reason } => {
                Err(Error::DegenerateColumn { reason })
            }
        }
    })
    .into_iter()
    .collect();
    let runs = runs?;
    Ok(fea2fea::report::mean_std(&runs))
}

pub fn sweep(cfg: &RunConfig, out: &Path, spec: &SweepSpec) -> Result<String> {
    prepare_out(out, cfg)?;
    configure_jobs(cfg)?;
    let values = sweep_values(spec)?;
    std::fs::create_dir_all(out.join("cells")).map_err(|e| Error::io(out.join("cells"), e))?;

    // Threshold sweeps share one set of trained combinations across cells.
    let trained: Option<Vec<CombinationResult>> = if spec.param == "threshold" {
        Some(threshold_sweep_training(cfg)?)
    } else {
        None
    };
    let matrix: Option<CorrelationMatrix> = if spec.param == "threshold" {
        let path = cfg.matrix.as_ref().ok_or_else(|| {
            Error::InvalidConfig("threshold sweep needs matrix (from a single run)".into())
        })?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Some(CorrelationMatrix::from_json(&text)?)
    } else {
        None
    };

    let source = pick_source(cfg)?;
    let data = if spec.param == "threshold" { None } else { Some(prepared_data(cfg, &source)?) };

    let mut skipped = 0usize;
    let mut failures = 0usize;
    let mut cells = Vec::with_capacity(values.len());
    for &value in &values {
        let path = cell_path(out, &spec.param, value);
        if spec.resume && path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            if let Ok(cell) = serde_json::from_str::<SweepCell>(&text) {
                if cell.error.is_some() {
                    failures += 1;
                }
                cells.push(cell);
                skipped += 1;
                continue;
            }
        }
        let outcome: Result<(f64, f64)> = match spec.param.as_str() {
            "bins" => {
                let bins = value as usize;
                let base_cfg = layer_config(cfg, ConvType::Gin)?;
                pair_accuracy(cfg, data.as_ref().unwrap(), &base_cfg, bins)
            }
            "depth" => {
                let mut base_cfg = layer_config(cfg, ConvType::Gin)?;
                base_cfg.depth = value as usize;
                let bins = cfg.bins.unwrap_or(binning::DEFAULT_NUM_BINS);
                pair_accuracy(cfg, data.as_ref().unwrap(), &base_cfg, bins)
            }
            "threshold" => threshold_cell(
                trained.as_ref().unwrap(),
                matrix.as_ref().unwrap(),
                cfg,
                value,
            ),
            other => Err(Error::InvalidConfig(format!("unknown sweep parameter '{other}'"))),
        };
        let cell = match outcome {
            Ok((mean, std)) => SweepCell {
                param: spec.param.clone(),
                value,
                accuracy: Some(mean),
                std: Some(std),
                error: None,
            },
            Err(e) => {
                failures += 1;
                SweepCell {
                    param: spec.param.clone(),
                    value,
                    accuracy: None,
                    std: None,
                    error: Some(e.to_string()),
                }
            }
        };
        write_text(&path, &(serde_json::to_string_pretty(&cell).expect("cell serializes") + "\n"))?;
        cells.push(cell);
    }

    let mut table = String::from("param,value,accuracy,std\n");
    for cell in &cells {
        match (cell.accuracy, cell.std) {
            (Some(a), Some(s)) => {
                table.push_str(&format!("{},{},{a:.6},{s:.6}\n", cell.param, cell.value))
            }
            _ => table.push_str(&format!("{},{},NA,NA\n", cell.param, cell.value)),
        }
    }
    write_text(&out.join("table.csv"), &table)?;
    Ok(format!(
        "sweep: {} over {} cell(s) ({skipped} resumed, {failures} failed) -> table.csv",
        spec.param,
        values.len()
    ))
}

/// Trains every combination for the sweep target once; threshold cells then
/// average the accuracies of their surviving combinations.
fn threshold_sweep_training(cfg: &RunConfig) -> Result<Vec<CombinationResult>> {
    let source = pick_source(cfg)?;
    let data = prepared_data(cfg, &source)?;
    let target = Feature::from_str(cfg.target.as_deref().unwrap_or("deg"))?;
    let all = enumerate_combinations(NUM_FEATURES, target.index())?;
    let methods = parse_methods(cfg.method.as_deref(), ConcatMethod::Simple)?;
    let base_cfg = layer_config(cfg, ConvType::Gin)?;
    let embed_dim = cfg.embed_dim.unwrap_or(DEFAULT_EMBED_DIM);
    let bins = cfg.bins.unwrap_or(binning::DEFAULT_NUM_BINS);
    let seeds = cfg.seeds();
    let settings = train_settings(cfg)?;
    let jobs: Vec<(FeatureCombination, ConcatMethod)> = all
        .iter()
        .flat_map(|c| methods.iter().map(move |&m| (c.clone(), m)))
        .collect();
    par::map_items(&jobs, |(comb, method)| {
        train_multi(comb, *method, &data, &base_cfg, embed_dim, bins, &seeds, &settings)
    })
    .into_iter()
    .collect()
}

fn threshold_cell(
    trained: &[CombinationResult],
    matrix: &CorrelationMatrix,
    cfg: &RunConfig,
    threshold: f64,
) -> Result<(f64, f64)> {
    let target = Feature::from_str(cfg.target.as_deref().unwrap_or("deg"))?;
    let all = enumerate_combinations(NUM_FEATURES, target.index())?;
    let surviving = filter_combinations(&all, matrix, threshold);
    let accs: Vec<f64> = trained
        .iter()
        .filter(|r| surviving.contains(&r.combination))
        .map(|r| r.mean)
        .collect();
    if accs.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no combinations survive threshold {threshold}"
        )));
    }
    Ok(fea2fea::report::mean_std(&accs))
}
