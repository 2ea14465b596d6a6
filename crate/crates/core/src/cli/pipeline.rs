use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{Background, PipelineConfig};
use super::StageError;
use crate::attribution::{
    class_global_importance, cluster_profiles, map_to_features, player_cells, select_hvf, ShapConfig,
};
use crate::cnn::{evaluate, load_checkpoint, probabilities, save_checkpoint, train as train_net, ConvNet};
use crate::community::{association_matrix, community_count, kmeans_restarts, CommunityModel};
use crate::graph::{
    align_feature_table, generate_sbm, load_feature_table, load_graph, split_dataset, write_graph, AttributedGraph,
    DatasetSplit, SplitSet,
};
use crate::imaging::{
    build_feature_layout, build_structural_layout, feature_association, read_tensor, render_all, write_tensor,
    FeatureLayout, ImageSet, StructuralLayout,
};
use crate::matrix::Matrix;
use crate::metrics::{score_embedding, scores_csv};
use crate::rng::derive_seed;
use crate::transport::{GwOptions, LayoutPermutation};

pub const GRAPH_SUMMARY: &str = "graph_summary.txt";
pub const COMMUNITIES: &str = "communities.csv";
pub const CENTROIDS: &str = "centroids.csv";
pub const ASSOCIATION: &str = "association.csv";
pub const STRUCTURE_LAYOUT: &str = "layout_structure.csv";
pub const IMAGES: &str = "images.g2im";
pub const SPLIT: &str = "split.csv";
pub const CHECKPOINT: &str = "checkpoint.g2im";
pub const TRAIN_REPORT: &str = "train_report.csv";
pub const EVAL: &str = "eval.csv";
pub const PREDICTIONS: &str = "predictions.csv";
pub const IMPORTANCE: &str = "importance.csv";
pub const STRUCTURAL_IMPORTANCE: &str = "structural_importance.csv";
pub const CLASS_TREE: &str = "dendrogram_classes.nwk";
pub const FEATURE_TREE: &str = "dendrogram_features.nwk";
pub const CLUSTERING_METRICS: &str = "clustering_metrics.csv";

/// Name of the channel holding the community layout; not usable as a modality name.
const STRUCTURE: &str = "structure";

/// Rows scored per call when embedding the whole image set.
const EMBED_CHUNK: usize = 256;

pub fn feature_layout_file(modality: &str) -> String {
    format!("layout_{modality}.csv")
}

fn err<E: Display>(stage: &'static str) -> impl Fn(E) -> StageError {
    move |e| StageError::new(stage, e.to_string())
}

/// One node-by-feature table, rows in graph node order.
#[derive(Debug, Clone)]
pub struct Modality {
    pub name: String,
    pub feature_names: Vec<String>,
    pub values: Matrix,
}

/// The validated graph plus every modality aligned to it.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub graph: AttributedGraph,
    pub modalities: Vec<Modality>,
}

impl Inputs {
    /// A graph whose own feature matrix is the only modality.
    pub fn from_graph(graph: AttributedGraph, modality: &str) -> Result<Self, StageError> {
        check_modality_name(modality)?;
        let modalities = vec![Modality {
            name: modality.to_string(),
            feature_names: graph.feature_names().to_vec(),
            values: graph.features().clone(),
        }];
        Ok(Self { graph, modalities })
    }

    /// Side of the shared image grid: large enough for the widest modality.
    pub fn image_side(&self) -> usize {
        self.modalities.iter().map(|m| community_count(m.values.cols())).max().unwrap_or(1)
    }

    fn labels(&self, stage: &'static str) -> Result<&[usize], StageError> {
        self.graph.labels().ok_or_else(|| StageError::new(stage, "node labels are required (--labels)"))
    }

    fn class_names(&self, stage: &'static str) -> Result<&[String], StageError> {
        self.graph.class_names().ok_or_else(|| StageError::new(stage, "node labels are required (--labels)"))
    }
}

fn check_modality_name(name: &str) -> Result<(), StageError> {
    let valid = !name.is_empty()
        && name != STRUCTURE
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.');
    if valid {
        Ok(())
    } else {
        Err(StageError::new(
            "ingest",
            format!("modality name {name:?} must be non-empty ASCII letters, digits, '_', '-' or '.', and not {STRUCTURE:?}"),
        ))
    }
}

pub fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs, StageError> {
    let edges = cfg.edges.as_deref().ok_or_else(|| StageError::new("ingest", "--edges is required"))?;
    let features = cfg.features.as_deref().ok_or_else(|| StageError::new("ingest", "--features is required"))?;
    let graph = load_graph(edges, features, cfg.labels.as_deref()).map_err(err("ingest"))?;
    let Inputs { graph, mut modalities } = Inputs::from_graph(graph, &cfg.feature_modality)?;
    for (name, path) in &cfg.modalities {
        check_modality_name(name)?;
        if modalities.iter().any(|m| &m.name == name) {
            return Err(StageError::new("ingest", format!("modality {name:?} given twice")));
        }
        let table = load_feature_table(path).map_err(err("ingest"))?;
        let values = align_feature_table(&table, graph.node_ids()).map_err(err("ingest"))?;
        if table.node_ids.len() > graph.n() {
            log::warn!(
                "modality {name}: {} rows do not belong to the graph and are ignored",
                table.node_ids.len() - graph.n()
            );
        }
        modalities.push(Modality { name: name.clone(), feature_names: table.feature_names, values });
    }
    Ok(Inputs { graph, modalities })
}

fn out_dir(cfg: &PipelineConfig, stage: &'static str) -> Result<PathBuf, StageError> {
    let dir = cfg.out_dir()?.to_path_buf();
    fs::create_dir_all(&dir).map_err(|e| StageError::new(stage, format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_rows(stage: &'static str, path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), StageError> {
    let fail = |e: csv::Error| StageError::new(stage, format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row).map_err(fail)?;
    }
    w.flush().map_err(|e| StageError::new(stage, format!("{}: {e}", path.display())))
}

fn read_rows(stage: &'static str, path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), StageError> {
    let fail = |e: csv::Error| {
        StageError::new(stage, format!("{}: {e} (run the stage that produces it first)", path.display()))
    };
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(fail)?;
    let header = r.headers().map_err(fail)?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()
        .map_err(fail)?;
    Ok((header, rows))
}

fn write_text(stage: &'static str, path: &Path, text: &str) -> Result<(), StageError> {
    fs::write(path, text).map_err(|e| StageError::new(stage, format!("{}: {e}", path.display())))
}

fn parse_f64(stage: &'static str, path: &Path, field: &str) -> Result<f64, StageError> {
    field.parse().map_err(|_| StageError::new(stage, format!("{}: bad number {field:?}", path.display())))
}

fn community_names(p: usize) -> Vec<String> {
    (0..p).map(|c| format!("c{c}")).collect()
}

/// Checks that an artifact lists exactly the graph's nodes in graph order.
fn check_node_order<'a>(
    stage: &'static str,
    path: &Path,
    graph: &AttributedGraph,
    ids: impl ExactSizeIterator<Item = &'a str>,
) -> Result<(), StageError> {
    let n = ids.len();
    if n != graph.n() || !ids.zip(graph.node_ids()).all(|(a, b)| a == b) {
        return Err(StageError::new(
            stage,
            format!("{} does not match the input graph's nodes; rerun the earlier stages", path.display()),
        ));
    }
    Ok(())
}

/// Validates the inputs and writes a short summary.
pub fn ingest(cfg: &PipelineConfig) -> Result<Inputs, StageError> {
    let inputs = load_inputs(cfg)?;
    let out = out_dir(cfg, "ingest")?;
    let g = &inputs.graph;
    let adj = g.adjacency();
    let edges = (0..g.n()).map(|i| (i + 1..g.n()).filter(|&j| adj[(i, j)] != 0.0).count()).sum::<usize>();
    let mut text = format!("nodes\t{}\nedges\t{edges}\nclasses\t{}\n", g.n(), g.n_classes());
    for m in &inputs.modalities {
        text.push_str(&format!("modality\t{}\t{}\n", m.name, m.values.cols()));
    }
    text.push_str(&format!("image_side\t{}\n", inputs.image_side()));
    write_text("ingest", &out.join(GRAPH_SUMMARY), &text)?;
    log::info!("ingest: {} nodes, {edges} edges, {} modalities", g.n(), inputs.modalities.len());
    Ok(inputs)
}

/// k-means on adjacency rows with `ceil(sqrt(k))` communities unless configured.
pub fn fit_model(cfg: &PipelineConfig, graph: &AttributedGraph) -> Result<CommunityModel, StageError> {
    let p = cfg.communities.unwrap_or_else(|| community_count(graph.k()));
    let model = kmeans_restarts(
        graph.adjacency(),
        p,
        derive_seed(cfg.seed, "cluster"),
        cfg.kmeans_max_iter,
        cfg.kmeans_restarts,
    )
    .map_err(err("cluster"))?;
    if !model.converged {
        log::warn!("cluster: k-means stopped at the iteration cap before converging");
    }
    log::info!("cluster: {p} communities, inertia {:.6}, sizes {:?}", model.inertia(), model.sizes());
    Ok(model)
}

/// The community grid and one feature grid per modality, all sized to the shared image side.
pub fn compute_layouts(
    cfg: &PipelineConfig,
    inputs: &Inputs,
    model: &CommunityModel,
) -> Result<(StructuralLayout, Vec<FeatureLayout>), StageError> {
    let assoc = association_matrix(&model.centroids);
    let structural = build_structural_layout(&assoc, &gw_options(cfg, STRUCTURE)).map_err(err("layout"))?;
    let side = inputs.image_side();
    if structural.grid_side > side {
        return Err(StageError::new(
            "layout",
            format!("{} communities need a {0}x{0} grid, larger than the {side}x{side} image", structural.grid_side),
        ));
    }
    let features = inputs
        .modalities
        .iter()
        .map(|m| {
            build_feature_layout(&m.values, &m.feature_names, &m.name, Some(side), &gw_options(cfg, &m.name))
                .map_err(err("layout"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    log::info!("layout: {side}x{side} image, {0}x{0} community block", structural.grid_side);
    Ok((structural, features))
}

fn render_images(
    inputs: &Inputs,
    model: &CommunityModel,
    structural: &StructuralLayout,
    layouts: &[FeatureLayout],
) -> Result<ImageSet, StageError> {
    let mats: Vec<&Matrix> = inputs.modalities.iter().map(|m| &m.values).collect();
    let images = render_all(&inputs.graph, model, structural, layouts, &mats).map_err(err("render"))?;
    log::info!("render: {} images of shape {:?}", images.len(), images.shape().unwrap_or_default());
    Ok(images)
}

/// Cluster, layout and render without touching the disk. Produces the same
/// images as the file-based stages for the same settings.
pub fn render_in_memory(cfg: &PipelineConfig, inputs: &Inputs) -> Result<ImageSet, StageError> {
    let model = fit_model(cfg, &inputs.graph)?;
    let (structural, layouts) = compute_layouts(cfg, inputs, &model)?;
    render_images(inputs, &model, &structural, &layouts)
}

/// Partitions nodes by adjacency rows and writes assignments, centroids and
/// the standardized centroid distances.
pub fn cluster(cfg: &PipelineConfig) -> Result<(), StageError> {
    let inputs = load_inputs(cfg)?;
    let out = out_dir(cfg, "cluster")?;
    let g = &inputs.graph;
    let model = fit_model(cfg, g)?;
    let p = model.p();

    let rows: Vec<Vec<String>> = g
        .node_ids()
        .iter()
        .zip(&model.assignment)
        .map(|(id, c)| vec![id.clone(), c.to_string()])
        .collect();
    write_rows("cluster", &out.join(COMMUNITIES), &["node_id".into(), "community".into()], &rows)?;

    let mut header = vec!["community".to_string()];
    header.extend(g.node_ids().iter().cloned());
    let rows: Vec<Vec<String>> = (0..p)
        .map(|c| {
            let mut row = vec![c.to_string()];
            row.extend(model.centroids.row(c).iter().map(f64::to_string));
            row
        })
        .collect();
    write_rows("cluster", &out.join(CENTROIDS), &header, &rows)?;

    let assoc = association_matrix(&model.centroids);
    let mut header = vec!["community".to_string()];
    header.extend(community_names(p));
    let rows: Vec<Vec<String>> = (0..p)
        .map(|c| {
            let mut row = vec![format!("c{c}")];
            row.extend(assoc.values.row(c).iter().map(f64::to_string));
            row
        })
        .collect();
    write_rows("cluster", &out.join(ASSOCIATION), &header, &rows)
}

pub fn read_communities(cfg: &PipelineConfig, graph: &AttributedGraph, stage: &'static str) -> Result<CommunityModel, StageError> {
    let out = cfg.out_dir()?;
    let path = out.join(COMMUNITIES);
    let (_, rows) = read_rows(stage, &path)?;
    check_node_order(stage, &path, graph, rows.iter().map(|r| r[0].as_str()))?;
    let assignment = rows
        .iter()
        .map(|r| r.get(1).and_then(|c| c.parse::<usize>().ok()))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| StageError::new(stage, format!("{}: bad community column", path.display())))?;

    let path = out.join(CENTROIDS);
    let (header, rows) = read_rows(stage, &path)?;
    check_node_order(stage, &path, graph, header[1..].iter().map(String::as_str))?;
    let n = graph.n();
    let mut data = Vec::with_capacity(rows.len() * n);
    for (c, row) in rows.iter().enumerate() {
        if row.len() != n + 1 || row[0] != c.to_string() {
            return Err(StageError::new(stage, format!("{}: malformed row {}", path.display(), c + 2)));
        }
        for field in &row[1..] {
            data.push(parse_f64(stage, &path, field)?);
        }
    }
    let p = rows.len();
    if p == 0 || assignment.iter().any(|&c| c >= p) {
        return Err(StageError::new(stage, "community assignments and centroids disagree"));
    }
    Ok(CommunityModel {
        centroids: Matrix::from_vec(p, n, data),
        assignment,
        inertia_history: Vec::new(),
        seed: derive_seed(cfg.seed, "cluster"),
        converged: true,
    })
}

fn gw_options(cfg: &PipelineConfig, name: &str) -> GwOptions {
    GwOptions {
        epsilon: cfg.epsilon,
        seed: derive_seed(cfg.seed, &format!("layout.{name}")),
        restarts: cfg.gw_restarts,
        max_iter: cfg.gw_max_iter,
        ..GwOptions::default()
    }
}

/// Computes the community grid and one feature grid per modality.
pub fn layout(cfg: &PipelineConfig) -> Result<(), StageError> {
    let inputs = load_inputs(cfg)?;
    let out = out_dir(cfg, "layout")?;
    let model = read_communities(cfg, &inputs.graph, "layout")?;
    let (structural, features) = compute_layouts(cfg, &inputs, &model)?;
    structural
        .layout
        .write_csv(&out.join(STRUCTURE_LAYOUT), &community_names(model.p()))
        .map_err(err("layout"))?;
    for fl in &features {
        fl.layout.write_csv(&out.join(feature_layout_file(&fl.modality)), &fl.feature_names).map_err(err("layout"))?;
    }
    Ok(())
}

pub fn read_layouts(
    cfg: &PipelineConfig,
    inputs: &Inputs,
    model: &CommunityModel,
    stage: &'static str,
) -> Result<(StructuralLayout, Vec<FeatureLayout>), StageError> {
    let out = cfg.out_dir()?;
    let p = model.p();
    let grid_side = community_count(p);
    let layout = LayoutPermutation::read_csv(&out.join(STRUCTURE_LAYOUT), &community_names(p), grid_side)
        .map_err(err(stage))?;
    let structural = StructuralLayout { layout, grid_side, association: association_matrix(&model.centroids) };
    let side = inputs.image_side();
    let features = inputs
        .modalities
        .iter()
        .map(|m| {
            let layout = LayoutPermutation::read_csv(&out.join(feature_layout_file(&m.name)), &m.feature_names, side)
                .map_err(err(stage))?;
            Ok(FeatureLayout {
                modality: m.name.clone(),
                feature_names: m.feature_names.clone(),
                assoc: feature_association(&m.values),
                layout,
                grid_side: side,
            })
        })
        .collect::<Result<Vec<_>, StageError>>()?;
    Ok((structural, features))
}

/// Renders one multi-channel image per node.
pub fn render(cfg: &PipelineConfig) -> Result<(), StageError> {
    let inputs = load_inputs(cfg)?;
    let out = out_dir(cfg, "render")?;
    let model = read_communities(cfg, &inputs.graph, "render")?;
    let (structural, layouts) = read_layouts(cfg, &inputs, &model, "render")?;
    let images = render_images(&inputs, &model, &structural, &layouts)?;
    write_tensor(&images, &out.join(IMAGES)).map_err(err("render"))
}

pub fn read_images(cfg: &PipelineConfig, graph: &AttributedGraph, stage: &'static str) -> Result<ImageSet, StageError> {
    let path = cfg.out_dir()?.join(IMAGES);
    let images = read_tensor(&path).map_err(|e| StageError::new(stage, format!("{}: {e}", path.display())))?;
    check_node_order(stage, &path, graph, images.images.iter().map(|i| i.node_id.as_str()))?;
    Ok(images)
}

/// Splits the labelled nodes, trains the network and saves the best checkpoint.
pub fn train(cfg: &PipelineConfig) -> Result<(), StageError> {
    let inputs = load_inputs(cfg)?;
    let out = out_dir(cfg, "train")?;
    let labels = inputs.labels("train")?;
    let images = read_images(cfg, &inputs.graph, "train")?;
    let split = split_dataset(labels, cfg.split, derive_seed(cfg.seed, "split")).map_err(err("train"))?;
    let membership = split.membership(inputs.graph.n());
    let rows: Vec<Vec<String>> = inputs
        .graph
        .node_ids()
        .iter()
        .zip(&membership)
        .filter_map(|(id, set)| set.map(|s| vec![id.clone(), s.as_str().to_string()]))
        .collect();
    write_rows("train", &out.join(SPLIT), &["node_id".into(), "set".into()], &rows)?;

    let (side, _, channels) = images.shape().ok_or_else(|| StageError::new("train", "no images"))?;
    let config = cfg.cnn_config(side, channels, inputs.graph.n_classes(), derive_seed(cfg.seed, "cnn"));
    log::info!(
        "train: {} train / {} val / {} test nodes",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    let (net, report) = train_net(&images, &split, &config).map_err(err("train"))?;
    save_checkpoint(&net, &out.join(CHECKPOINT)).map_err(err("train"))?;
    report.write_csv(&out.join(TRAIN_REPORT)).map_err(err("train"))?;
    log::info!("train: best epoch {} with validation loss {:.6}", report.best_epoch, report.best_val_loss);
    Ok(())
}

pub fn read_split(cfg: &PipelineConfig, graph: &AttributedGraph, stage: &'static str) -> Result<DatasetSplit, StageError> {
    let path = cfg.out_dir()?.join(SPLIT);
    let (_, rows) = read_rows(stage, &path)?;
    let index = graph.node_index();
    let mut split =
        DatasetSplit { train: Vec::new(), val: Vec::new(), test: Vec::new(), seed: derive_seed(cfg.seed, "split") };
    for row in &rows {
        let bad = || StageError::new(stage, format!("{}: bad row {row:?}", path.display()));
        let &i = index.get(row.first().ok_or_else(bad)?.as_str()).ok_or_else(bad)?;
        match row.get(1).map(String::as_str) {
            Some(s) if s == SplitSet::Train.as_str() => split.train.push(i),
            Some(s) if s == SplitSet::Val.as_str() => split.val.push(i),
            Some(s) if s == SplitSet::Test.as_str() => split.test.push(i),
            _ => return Err(bad()),
        }
    }
    for set in [&mut split.train, &mut split.val, &mut split.test] {
        set.sort_unstable();
    }
    Ok(split)
}

fn read_checkpoint(cfg: &PipelineConfig, stage: &'static str) -> Result<ConvNet, StageError> {
    let path = cfg.out_dir()?.join(CHECKPOINT);
    load_checkpoint(&path).map_err(|e| StageError::new(stage, format!("{}: {e}", path.display())))
}

/// Scores the saved checkpoint on every split and records per-node predictions.
pub fn eval(cfg: &PipelineConfig) -> Result<(), StageError> {
    let inputs = load_inputs(cfg)?;
    let out = out_dir(cfg, "eval")?;
    let labels = inputs.labels("eval")?;
    let class_names = inputs.class_names("eval")?;
    let images = read_images(cfg, &inputs.graph, "eval")?;
    let split = read_split(cfg, &inputs.graph, "eval")?;
    let net = read_checkpoint(cfg, "eval")?;

    let mut rows = Vec::new();
    for (set, idx) in [(SplitSet::Train, &split.train), (SplitSet::Val, &split.val), (SplitSet::Test, &split.test)] {
        if idx.is_empty() {
            continue;
        }
        let m = evaluate(&net, &images, idx).map_err(err("eval"))?;
        log::info!(
            "eval: {} accuracy {:.4} macro F1 {:.4}",
            set.as_str(),
            m.accuracy,
            m.f1
        );
        rows.push(vec![
            set.as_str().to_string(),
            m.accuracy.to_string(),
            m.precision.to_string(),
            m.recall.to_string(),
            m.f1.to_string(),
        ]);
    }
    let header: Vec<String> = ["split", "accuracy", "precision", "recall", "f1"].map(String::from).to_vec();
    write_rows("eval", &out.join(EVAL), &header, &rows)?;

    let all: Vec<usize> = (0..images.len()).collect();
    let probs = probabilities(&net, &images, &all).map_err(err("eval"))?;
    let membership = split.membership(images.len());
    let mut header: Vec<String> = ["node_id", "set", "label", "predicted"].map(String::from).to_vec();
    header.extend(class_names.iter().map(|c| format!("p_{c}")));
    let rows: Vec<Vec<String>> = (0..images.len())
        .map(|i| {
            let row = probs.row(i);
            let pred = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            let mut fields = vec![
                images.images[i].node_id.clone(),
                membership[i].map_or("", |s| s.as_str()).to_string(),
                class_names[labels[i]].clone(),
                class_names[pred].clone(),
            ];
            fields.extend(row.iter().map(f64::to_string));
            fields
        })
        .collect();
    write_rows("eval", &out.join(PREDICTIONS), &header, &rows)
}

/// Class-level Shapley attribution on the test nodes, mapped back to features,
/// plus dendrograms of the class and feature importance profiles.
pub fn explain(cfg: &PipelineConfig) -> Result<(), StageError> {
    let inputs = load_inputs(cfg)?;
    let out = out_dir(cfg, "explain")?;
    let class_names = inputs.class_names("explain")?;
    let model = read_communities(cfg, &inputs.graph, "explain")?;
    let (structural, layouts) = read_layouts(cfg, &inputs, &model, "explain")?;
    let images = read_images(cfg, &inputs.graph, "explain")?;
    let split = read_split(cfg, &inputs.graph, "explain")?;
    let net = read_checkpoint(cfg, "explain")?;
    if split.test.is_empty() {
        return Err(StageError::new("explain", "the test split is empty"));
    }

    let selected: Vec<Vec<usize>> = inputs.modalities.iter().map(|m| select_hvf(&m.values, cfg.n_hvf)).collect();
    let shape = images.shape().ok_or_else(|| StageError::new("explain", "no images"))?;
    let players = player_cells(shape, &layouts, &selected, cfg.shap_structure.then_some(&structural))
        .map_err(err("explain"))?;
    let background = match cfg.background {
        Background::All => (0..images.len()).collect(),
        Background::Train => split.train.clone(),
    };
    let shap = ShapConfig {
        n_hvf: cfg.n_hvf,
        n_permutations: cfg.n_permutations,
        background,
        seed: derive_seed(cfg.seed, "shap"),
        include_structure: cfg.shap_structure,
    };
    log::info!(
        "explain: {} players, {} test images, {} orderings each",
        players.len(),
        split.test.len(),
        shap.n_permutations
    );
    let attr = class_global_importance(&net, &images, &split.test, &players, class_names.len(), &shap)
        .map_err(err("explain"))?;
    let table = map_to_features(&attr, &layouts, &structural, class_names).map_err(err("explain"))?;
    table.write_csv(&out.join(IMPORTANCE), &out.join(STRUCTURAL_IMPORTANCE)).map_err(err("explain"))?;
    for (c, name) in class_names.iter().enumerate() {
        if let Some(top) = table.top_feature(c) {
            log::info!("explain: class {name}: top feature {} ({:.4e})", top.feature, top.raw);
        }
    }

    // Trees over the selected features only; unselected ones carry no signal.
    let (labels, profiles) = table.profiles();
    let mut offset = 0;
    let mut keep = Vec::new();
    for (m, picks) in inputs.modalities.iter().zip(&selected) {
        let mut picks = picks.clone();
        picks.sort_unstable();
        keep.extend(picks.into_iter().map(|j| offset + j));
        offset += m.values.cols();
    }
    let kept = Matrix::from_fn(keep.len(), profiles.cols(), |i, c| profiles[(keep[i], c)]);
    let kept_labels: Vec<String> = keep.iter().map(|&i| labels[i].clone()).collect();
    write_tree(&out.join(FEATURE_TREE), &kept, &kept_labels)?;
    write_tree(&out.join(CLASS_TREE), &kept.transpose(), class_names)
}

fn write_tree(path: &Path, profiles: &Matrix, labels: &[String]) -> Result<(), StageError> {
    if profiles.rows() < 2 {
        log::warn!("explain: fewer than two items, skipping {}", path.display());
        return Ok(());
    }
    let tree = cluster_profiles(profiles, labels).map_err(err("explain"))?;
    write_text("explain", path, &tree.to_newick())
}

fn embed_all(net: &ConvNet, images: &ImageSet) -> Result<Matrix, StageError> {
    let len = net.config.input_len();
    let mut data = Vec::new();
    for chunk in images.images.chunks(EMBED_CHUNK) {
        let mut batch = Vec::with_capacity(chunk.len() * len);
        for img in chunk {
            batch.extend(img.tensor.to_f64());
        }
        data.extend(net.embed(&batch, chunk.len()).map_err(err("metrics"))?.into_vec());
    }
    Ok(Matrix::from_vec(images.len(), net.config.embedding_len(), data))
}

/// Clusters the penultimate-layer embedding, the raw pixels and the raw
/// features, and scores each partition against the node labels.
pub fn metrics(cfg: &PipelineConfig) -> Result<(), StageError> {
    let inputs = load_inputs(cfg)?;
    let out = out_dir(cfg, "metrics")?;
    let labels = inputs.labels("metrics")?;
    let images = read_images(cfg, &inputs.graph, "metrics")?;
    let net = read_checkpoint(cfg, "metrics")?;
    let seed = derive_seed(cfg.seed, "metrics");

    let pixels = {
        let len = images.shape().map_or(0, |(r, c, ch)| r * c * ch);
        let data = images.images.iter().flat_map(|i| i.tensor.to_f64()).collect();
        Matrix::from_vec(images.len(), len, data)
    };
    let embedding = embed_all(&net, &images)?;
    let mut rows = Vec::new();
    for (name, points) in [("embedding", &embedding), ("pixels", &pixels), ("features", inputs.graph.features())] {
        let scores = score_embedding(points, labels, seed).map_err(err("metrics"))?;
        log::info!("metrics: {name}: ARI {:.4} NMI {:.4}", scores.ari, scores.nmi);
        rows.push((name.to_string(), scores));
    }
    write_text("metrics", &out.join(CLUSTERING_METRICS), &scores_csv(&rows))
}

/// Writes a synthetic labelled block-model graph into the output directory.
pub fn synth(cfg: &PipelineConfig) -> Result<(), StageError> {
    let out = out_dir(cfg, "synth")?;
    let graph = generate_sbm(
        &cfg.synth_blocks,
        cfg.synth_p_in,
        cfg.synth_p_out,
        cfg.synth_k,
        cfg.synth_signal,
        derive_seed(cfg.seed, "synth"),
    )
    .map_err(err("synth"))?;
    let (edges, features, labels) = write_graph(&graph, &out).map_err(err("synth"))?;
    log::info!(
        "synth: wrote {}, {} and {}",
        edges.display(),
        features.display(),
        labels.map(|l| l.display().to_string()).unwrap_or_default()
    );
    Ok(())
}

/// Every stage in order. Each stage reads what the previous one wrote, so a
/// full run and a stage-by-stage run produce the same files.
pub fn run(cfg: &PipelineConfig) -> Result<(), StageError> {
    let inputs = ingest(cfg)?;
    cluster(cfg)?;
    layout(cfg)?;
    render(cfg)?;
    if inputs.graph.labels().is_none() {
        log::warn!("run: no labels given, stopping after render");
        return Ok(());
    }
    train(cfg)?;
    eval(cfg)?;
    explain(cfg)?;
    metrics(cfg)
}
