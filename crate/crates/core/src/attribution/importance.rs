use std::fs;
use std::path::Path;

use super::shapley::{mean_image, shapley_sample};
use super::{AttributionError, ClassScorer, ShapConfig};
use crate::imaging::{FeatureLayout, ImageSet, StructuralLayout};
use crate::matrix::Matrix;
use crate::rng::derive_seed;

/// Class-averaged Shapley values for every image cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    /// `(rows, cols, channels)` of the explained images.
    pub shape: (usize, usize, usize),
    /// Per class, one value per cell in tensor order (channel, row, col).
    pub values: Vec<Vec<f64>>,
    /// Explained images per class.
    pub counts: Vec<usize>,
}

impl AttributionMap {
    pub fn classes(&self) -> usize {
        self.values.len()
    }

    pub fn offset(&self, channel: usize, row: usize, col: usize) -> usize {
        let (rows, cols, _) = self.shape;
        (channel * rows + row) * cols + col
    }

    pub fn get(&self, class: usize, channel: usize, row: usize, col: usize) -> f64 {
        self.values[class][self.offset(channel, row, col)]
    }
}

fn structural_margin(side: usize, structural: &StructuralLayout) -> Result<usize, AttributionError> {
    side.checked_sub(structural.grid_side).map(|d| d / 2).ok_or_else(|| {
        AttributionError::LayoutMismatch(format!(
            "structural grid {0}x{0} larger than the {side}x{side} image",
            structural.grid_side
        ))
    })
}

/// Flat tensor offsets of the player cells: the selected features of each
/// modality (channel `m + 1`), then, when `structural` is given, every
/// community cell of channel 0.
pub fn player_cells(
    shape: (usize, usize, usize),
    layouts: &[FeatureLayout],
    selected: &[Vec<usize>],
    structural: Option<&StructuralLayout>,
) -> Result<Vec<usize>, AttributionError> {
    let (rows, cols, channels) = shape;
    if rows != cols || channels != layouts.len() + 1 || selected.len() != layouts.len() {
        return Err(AttributionError::LayoutMismatch(format!(
            "{} layouts and {} selections for images of shape {shape:?}",
            layouts.len(),
            selected.len()
        )));
    }
    let offset = |ch: usize, r: usize, c: usize| (ch * rows + r) * cols + c;
    let mut cells = Vec::new();
    for (m, (layout, picks)) in layouts.iter().zip(selected).enumerate() {
        if layout.grid_side != rows {
            return Err(AttributionError::LayoutMismatch(format!("modality {} grid differs from image", layout.modality)));
        }
        for &j in picks {
            let &(r, c) = layout
                .layout
                .item_to_cell
                .get(j)
                .ok_or_else(|| AttributionError::LayoutMismatch(format!("feature {j} not in layout {}", layout.modality)))?;
            cells.push(offset(m + 1, r, c));
        }
    }
    if let Some(s) = structural {
        let margin = structural_margin(rows, s)?;
        cells.extend(s.layout.item_to_cell.iter().map(|&(r, c)| offset(0, r + margin, c + margin)));
    }
    Ok(cells)
}

/// Explains each selected image against its true class and averages the
/// per-cell values within each class. Per-image sampling seeds come from the
/// config seed and the node id, so repeated images get repeated values.
pub fn class_global_importance<M: ClassScorer + ?Sized>(
    model: &M,
    images: &ImageSet,
    indices: &[usize],
    players: &[usize],
    classes: usize,
    config: &ShapConfig,
) -> Result<AttributionMap, AttributionError> {
    let shape = images.shape().ok_or(AttributionError::Invalid("no images".into()))?;
    let background = mean_image(images, &config.background)?;
    let len = background.len();
    let mut sums = vec![vec![0.0; len]; classes];
    let mut counts = vec![0usize; classes];
    for &i in indices {
        let img = images
            .images
            .get(i)
            .ok_or_else(|| AttributionError::Invalid(format!("image index {i} out of range")))?;
        let class = img
            .label
            .filter(|&l| l < classes)
            .ok_or_else(|| AttributionError::Invalid(format!("image {} has no usable label", img.node_id)))?;
        let x: Vec<f64> = img.tensor.to_f64();
        let seed = derive_seed(config.seed, &img.node_id);
        let phi = shapley_sample(model, &x, class, &background, players, config.n_permutations, seed)?;
        for (&cell, v) in players.iter().zip(phi) {
            sums[class][cell] += v;
        }
        counts[class] += 1;
    }
    for (class, sum) in sums.iter_mut().enumerate() {
        if counts[class] == 0 {
            log::warn!("class {class} has no explained images; its attribution stays zero");
            continue;
        }
        let n = counts[class] as f64;
        sum.iter_mut().for_each(|v| *v /= n);
    }
    Ok(AttributionMap { shape, values: sums, counts })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceRow {
    pub feature: String,
    pub modality: String,
    pub class: usize,
    pub raw: f64,
    /// `raw` divided by the largest `|raw|` of the class (0 if that is 0).
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralImportance {
    pub community: usize,
    pub class: usize,
    pub raw: f64,
}

/// Class-averaged attribution per named feature, plus per community.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImportanceTable {
    /// Ordered by modality, then feature index, then class.
    pub rows: Vec<ImportanceRow>,
    pub class_names: Vec<String>,
    /// Per-class normalization constant.
    pub class_max_abs: Vec<f64>,
    pub structural: Vec<StructuralImportance>,
}

/// Reads each feature's cell back through its modality layout. Dummy cells
/// are dropped; the structural channel is keyed by community.
pub fn map_to_features(
    attr: &AttributionMap,
    layouts: &[FeatureLayout],
    structural: &StructuralLayout,
    class_names: &[String],
) -> Result<FeatureImportanceTable, AttributionError> {
    let (rows, cols, channels) = attr.shape;
    if rows != cols || channels != layouts.len() + 1 {
        return Err(AttributionError::LayoutMismatch(format!(
            "{} layouts for an attribution map of shape {:?}",
            layouts.len(),
            attr.shape
        )));
    }
    if class_names.len() != attr.classes() {
        return Err(AttributionError::Invalid(format!("{} class names for {} classes", class_names.len(), attr.classes())));
    }
    let mut out = Vec::new();
    for (m, layout) in layouts.iter().enumerate() {
        if layout.grid_side != rows || layout.feature_names.len() != layout.layout.n_items {
            return Err(AttributionError::LayoutMismatch(format!("modality {} does not match the map", layout.modality)));
        }
        for (name, &(r, c)) in layout.feature_names.iter().zip(&layout.layout.item_to_cell) {
            for class in 0..attr.classes() {
                out.push(ImportanceRow {
                    feature: name.clone(),
                    modality: layout.modality.clone(),
                    class,
                    raw: attr.get(class, m + 1, r, c),
                    normalized: 0.0,
                });
            }
        }
    }
    let mut class_max_abs = vec![0.0f64; attr.classes()];
    for row in &out {
        class_max_abs[row.class] = class_max_abs[row.class].max(row.raw.abs());
    }
    for row in &mut out {
        let m = class_max_abs[row.class];
        row.normalized = if m > 0.0 { row.raw / m } else { 0.0 };
    }
    let margin = structural_margin(rows, structural)?;
    let mut s_rows = Vec::new();
    for (community, &(r, c)) in structural.layout.item_to_cell.iter().enumerate() {
        for class in 0..attr.classes() {
            s_rows.push(StructuralImportance { community, class, raw: attr.get(class, 0, r + margin, c + margin) });
        }
    }
    Ok(FeatureImportanceTable { rows: out, class_names: class_names.to_vec(), class_max_abs, structural: s_rows })
}

impl FeatureImportanceTable {
    /// The row with the largest raw value for `class` (first on ties).
    pub fn top_feature(&self, class: usize) -> Option<&ImportanceRow> {
        self.rows
            .iter()
            .filter(|r| r.class == class)
            .fold(None, |best: Option<&ImportanceRow>, r| match best {
                Some(b) if b.raw >= r.raw => Some(b),
                _ => Some(r),
            })
    }

    /// Feature-by-class matrix of raw scores with row labels. Labels carry a
    /// `modality:` prefix when more than one modality is present.
    pub fn profiles(&self) -> (Vec<String>, Matrix) {
        let classes = self.class_names.len();
        let multi = self.rows.iter().any(|r| r.modality != self.rows[0].modality);
        let mut labels = Vec::new();
        let mut data = Vec::new();
        for chunk in self.rows.chunks(classes.max(1)) {
            let r = &chunk[0];
            labels.push(if multi { format!("{}:{}", r.modality, r.feature) } else { r.feature.clone() });
            data.extend(chunk.iter().map(|r| r.raw));
        }
        let n = labels.len();
        (labels, Matrix::from_vec(n, classes, data))
    }

    pub fn to_csv(&self) -> Result<String, AttributionError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut write = |fields: [String; 5]| w.write_record(&fields).map_err(|e| AttributionError::Invalid(e.to_string()));
        write(["feature", "modality", "class", "shap_raw", "shap_normalized"].map(String::from))?;
        for r in &self.rows {
            write([
                r.feature.clone(),
                r.modality.clone(),
                self.class_names[r.class].clone(),
                r.raw.to_string(),
                r.normalized.to_string(),
            ])?;
        }
        into_string(w)
    }

    pub fn structural_csv(&self) -> Result<String, AttributionError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| AttributionError::Invalid(e.to_string());
        w.write_record(["community", "class", "shap_raw"]).map_err(err)?;
        for r in &self.structural {
            w.write_record([r.community.to_string(), self.class_names[r.class].clone(), r.raw.to_string()])
                .map_err(err)?;
        }
        into_string(w)
    }

    pub fn write_csv(&self, features: &Path, structural: &Path) -> Result<(), AttributionError> {
        for (path, body) in [(features, self.to_csv()?), (structural, self.structural_csv()?)] {
            fs::write(path, body).map_err(|source| AttributionError::Io { path: path.into(), source })?;
        }
        Ok(())
    }
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String, AttributionError> {
    let bytes = w.into_inner().map_err(|e| AttributionError::Invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| AttributionError::Invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::community::association_matrix;
    use crate::imaging::{NodeImage, Tensor3};
    use crate::transport::LayoutPermutation;

    fn feature_layout(names: usize, side: usize, perm: &[usize]) -> FeatureLayout {
        FeatureLayout {
            modality: "expr".into(),
            feature_names: (0..names).map(|j| format!("g{j}")).collect(),
            assoc: Matrix::identity(names),
            layout: LayoutPermutation::from_assignment(perm, names, side).unwrap(),
            grid_side: side,
        }
    }

    fn structural(p: usize, side: usize) -> StructuralLayout {
        let centroids = Matrix::from_fn(p, 1, |i, _| i as f64);
        StructuralLayout {
            layout: LayoutPermutation::identity(p, side),
            grid_side: side,
            association: association_matrix(&centroids),
        }
    }

    #[test]
    fn identity_layout_reads_row_major() {
        let side = 3;
        let values: Vec<f64> = (0..2 * side * side).map(|v| v as f64).collect();
        let attr = AttributionMap { shape: (3, 3, 2), values: vec![values], counts: vec![1] };
        let fl = feature_layout(9, 3, &(0..9).collect::<Vec<_>>());
        let t = map_to_features(&attr, &[fl], &structural(1, 1), &["a".into()]).unwrap();
        let raw: Vec<f64> = t.rows.iter().map(|r| r.raw).collect();
        assert_eq!(raw, (9..18).map(|v| v as f64).collect::<Vec<_>>());
        assert_eq!(t.structural, vec![StructuralImportance { community: 0, class: 0, raw: 4.0 }]);
        assert_eq!(t.rows[8].normalized, 1.0);
    }

    #[test]
    fn render_then_invert_recovers_the_table() {
        // Scatter a known table through a shuffled layout, then read it back.
        let perm = [5, 2, 7, 0, 3, 8, 1, 6, 4];
        let fl = feature_layout(7, 3, &perm);
        let known: Vec<Vec<f64>> = (0..2).map(|c| (0..7).map(|j| (j as f64 - 3.0) * (c as f64 + 1.0)).collect()).collect();
        let mut attr = AttributionMap { shape: (3, 3, 2), values: vec![vec![0.0; 18]; 2], counts: vec![1, 1] };
        for class in 0..2 {
            for (j, &(r, c)) in fl.layout.item_to_cell.iter().enumerate() {
                let o = attr.offset(1, r, c);
                attr.values[class][o] = known[class][j];
            }
        }
        let t = map_to_features(&attr, std::slice::from_ref(&fl), &structural(2, 2), &["a".into(), "b".into()]).unwrap();
        for row in &t.rows {
            let j: usize = row.feature[1..].parse().unwrap();
            assert_eq!(row.raw, known[row.class][j]);
        }
        assert_eq!(t.class_max_abs, vec![3.0, 6.0]);
        assert_eq!(t.top_feature(1).unwrap().feature, "g6");
        let csv = t.to_csv().unwrap();
        assert!(csv.starts_with("feature,modality,class,shap_raw,shap_normalized\ng0,expr,a,-3,-1\n"));
    }

    #[test]
    fn class_average_and_duplicates() {
        struct Sum;
        impl ClassScorer for Sum {
            fn input_len(&self) -> usize {
                2
            }
            fn class_scores(&self, batch: &[f64], n: usize, _c: usize) -> Result<Vec<f64>, AttributionError> {
                Ok((0..n).map(|i| batch[2 * i] + 3.0 * batch[2 * i + 1]).collect())
            }
        }
        let img = |id: &str, label, a: f32, b: f32| NodeImage {
            node_id: id.into(),
            label: Some(label),
            tensor: Tensor3::from_vec(1, 1, 2, vec![a, b]).unwrap(),
        };
        let set = ImageSet::new(
            vec!["structure".into(), "expr".into()],
            vec![img("a", 0, 1.0, 2.0), img("b", 0, 3.0, 0.0), img("c", 1, 0.0, 1.0)],
        )
        .unwrap();
        let cfg = ShapConfig { background: vec![0, 1, 2], ..ShapConfig::new(vec![], 4) };
        let map = class_global_importance(&Sum, &set, &[0, 1, 2], &[0, 1], 3, &cfg).unwrap();
        // Background mean is (4/3, 1); the game is linear.
        let bg = [4.0 / 3.0, 1.0];
        assert!((map.values[0][0] - ((1.0 - bg[0]) + (3.0 - bg[0])) / 2.0).abs() < 1e-12);
        assert!((map.values[0][1] - 3.0 * ((2.0 - bg[1]) + (0.0 - bg[1])) / 2.0).abs() < 1e-12);
        assert!((map.values[1][1] - 0.0).abs() < 1e-12);
        assert_eq!(map.counts, vec![2, 1, 0]);
        assert_eq!(map.values[2], vec![0.0, 0.0]);
        let doubled = class_global_importance(&Sum, &set, &[0, 1, 2, 0, 1, 2], &[0, 1], 3, &cfg).unwrap();
        for (a, b) in map.values.iter().flatten().zip(doubled.values.iter().flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn players_cover_selected_features_and_structure() {
        let fl = feature_layout(3, 2, &[3, 0, 2, 1]);
        let s = structural(1, 1);
        let cells = player_cells((2, 2, 2), std::slice::from_ref(&fl), &[vec![2, 0]], Some(&s)).unwrap();
        // Feature 2 at (1,0), feature 0 at (1,1) of channel 1; community 0 at the structural margin (0,0).
        assert_eq!(cells, vec![4 + 2, 4 + 3, 0]);
        assert!(player_cells((3, 3, 2), &[fl], &[vec![0]], None).is_err());
    }
}
