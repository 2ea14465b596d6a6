use crate::community::CommunityModel;
use crate::graph::AttributedGraph;
use crate::matrix::Matrix;

use super::{FeatureLayout, ImageSet, ImagingError, NodeImage, StructuralLayout, Tensor3};

/// Everything needed to paint one node's image, checked for consistency once.
#[derive(Debug, Clone)]
pub struct Renderer<'a> {
    assignment: &'a [usize],
    structural: &'a StructuralLayout,
    features: &'a [FeatureLayout],
    modalities: Vec<&'a Matrix>,
    side: usize,
    /// Offset of the structural block inside the image.
    margin: usize,
}

impl<'a> Renderer<'a> {
    pub fn new(
        model: &'a CommunityModel,
        structural: &'a StructuralLayout,
        features: &'a [FeatureLayout],
        modalities: &[&'a Matrix],
    ) -> Result<Self, ImagingError> {
        let mismatch = |msg: String| Err(ImagingError::LayoutMismatch(msg));
        if features.is_empty() {
            return mismatch("at least one feature modality is required".into());
        }
        if features.len() != modalities.len() {
            return mismatch(format!("{} feature layouts for {} modalities", features.len(), modalities.len()));
        }
        let p = model.p();
        if structural.layout.n_items != p {
            return mismatch(format!("structural layout covers {} communities, model has {p}", structural.layout.n_items));
        }
        if structural.association.p() != p {
            return mismatch(format!("association matrix is {0}x{0}, model has {p} communities", structural.association.p()));
        }
        let side = features[0].grid_side;
        let n = model.assignment.len();
        for (fl, m) in features.iter().zip(modalities) {
            if fl.grid_side != side || fl.layout.grid_side != side {
                return mismatch(format!("modality {} uses a {}x{} grid, expected {side}", fl.modality, fl.grid_side, fl.grid_side));
            }
            if fl.layout.n_items != m.cols() {
                return mismatch(format!(
                    "modality {} layout covers {} features, matrix has {}",
                    fl.modality,
                    fl.layout.n_items,
                    m.cols()
                ));
            }
            if m.rows() != n {
                return mismatch(format!("modality {} has {} rows for {n} nodes", fl.modality, m.rows()));
            }
        }
        if structural.grid_side > side {
            return mismatch(format!(
                "structural grid {0}x{0} does not fit in the {side}x{side} feature grid",
                structural.grid_side
            ));
        }
        Ok(Self {
            assignment: &model.assignment,
            structural,
            features,
            modalities: modalities.to_vec(),
            side,
            margin: (side - structural.grid_side) / 2,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn channels(&self) -> usize {
        self.features.len() + 1
    }

    pub fn channel_names(&self) -> Vec<String> {
        std::iter::once("structure".to_string()).chain(self.features.iter().map(|f| f.modality.clone())).collect()
    }

    /// Image cell holding community `l` in the structural channel.
    pub fn structural_cell(&self, community: usize) -> (usize, usize) {
        let (r, c) = self.structural.layout.item_to_cell[community];
        (r + self.margin, c + self.margin)
    }

    pub fn render(&self, node: usize) -> Result<Tensor3, ImagingError> {
        let Some(&community) = self.assignment.get(node) else {
            return Err(ImagingError::LayoutMismatch(format!("node {node} out of range")));
        };
        let mut tensor = Tensor3::zeros(self.side, self.side, self.channels());
        let z = &self.structural.association.values;
        for l in 0..z.cols() {
            let (r, c) = self.structural_cell(l);
            tensor.set(0, r, c, z[(community, l)] as f32);
        }
        for (ch, (fl, m)) in self.features.iter().zip(&self.modalities).enumerate() {
            for (j, &(r, c)) in fl.layout.item_to_cell.iter().enumerate() {
                tensor.set(ch + 1, r, c, m[(node, j)] as f32);
            }
        }
        Ok(tensor)
    }
}

/// Renders a single node: structural channel first, then one channel per modality.
pub fn render_node(
    node: usize,
    graph: &AttributedGraph,
    model: &CommunityModel,
    structural: &StructuralLayout,
    features: &[FeatureLayout],
    modalities: &[&Matrix],
) -> Result<NodeImage, ImagingError> {
    check_graph(graph, model)?;
    let renderer = Renderer::new(model, structural, features, modalities)?;
    Ok(NodeImage {
        node_id: graph.node_ids()[node].clone(),
        label: graph.labels().map(|l| l[node]),
        tensor: renderer.render(node)?,
    })
}

/// Renders every node in node order.
pub fn render_all(
    graph: &AttributedGraph,
    model: &CommunityModel,
    structural: &StructuralLayout,
    features: &[FeatureLayout],
    modalities: &[&Matrix],
) -> Result<ImageSet, ImagingError> {
    check_graph(graph, model)?;
    let renderer = Renderer::new(model, structural, features, modalities)?;
    let labels = graph.labels();
    let images = (0..graph.n())
        .map(|i| {
            Ok(NodeImage {
                node_id: graph.node_ids()[i].clone(),
                label: labels.map(|l| l[i]),
                tensor: renderer.render(i)?,
            })
        })
        .collect::<Result<Vec<_>, ImagingError>>()?;
    ImageSet::new(renderer.channel_names(), images)
}

fn check_graph(graph: &AttributedGraph, model: &CommunityModel) -> Result<(), ImagingError> {
    if model.assignment.len() != graph.n() {
        return Err(ImagingError::LayoutMismatch(format!(
            "community model covers {} nodes, graph has {}",
            model.assignment.len(),
            graph.n()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::community::{association_matrix, fit_communities, CommunityModel, DEFAULT_MAX_ITER};
    use crate::graph::generate_sbm;
    use crate::imaging::{build_feature_layout, build_structural_layout};
    use crate::transport::{GwOptions, LayoutPermutation};

    fn model_with(assignment: Vec<usize>, centroids: Matrix) -> CommunityModel {
        CommunityModel { centroids, assignment, inertia_history: vec![0.0], seed: 0, converged: true }
    }

    #[test]
    fn one_by_one_image() {
        let model = model_with(vec![0, 0], Matrix::from_rows(&[[1.0]]));
        let s = build_structural_layout(&association_matrix(&model.centroids), &GwOptions::default()).unwrap();
        let f = Matrix::from_rows(&[[2.5], [-1.0]]);
        let fl = build_feature_layout(&f, &["x".into()], "expr", None, &GwOptions::default()).unwrap();
        let r = Renderer::new(&model, &s, std::slice::from_ref(&fl), &[&f]).unwrap();
        let t = r.render(1).unwrap();
        assert_eq!(t.shape(), (1, 1, 2));
        assert_eq!(t.as_slice(), &[0.0, -1.0]);
    }

    #[test]
    fn structural_block_is_centered() {
        // P = 4 communities on a 2x2 grid inside a 4x4 image.
        let centroids = Matrix::from_rows(&[[0.0], [1.0], [3.0], [7.0]]);
        let model = model_with(vec![0, 1, 2, 3], centroids);
        let assoc = association_matrix(&model.centroids);
        let s = StructuralLayout {
            layout: LayoutPermutation::identity(4, 2),
            grid_side: 2,
            association: assoc.clone(),
        };
        let f = Matrix::from_fn(4, 16, |i, j| (i * 16 + j) as f64);
        let names: Vec<String> = (0..16).map(|j| format!("f{j}")).collect();
        let fl = FeatureLayout {
            modality: "m".into(),
            feature_names: names,
            assoc: Matrix::identity(16),
            layout: LayoutPermutation::identity(16, 4),
            grid_side: 4,
        };
        let r = Renderer::new(&model, &s, std::slice::from_ref(&fl), &[&f]).unwrap();
        let t = r.render(2).unwrap();
        for row in 0..4 {
            for col in 0..4 {
                let inside = (1..=2).contains(&row) && (1..=2).contains(&col);
                let v = t.get(0, row, col);
                if inside {
                    let l = (row - 1) * 2 + (col - 1);
                    assert_eq!(v, assoc.values[(2, l)] as f32);
                } else {
                    assert_eq!(v, 0.0);
                }
                assert_eq!(t.get(1, row, col), (2 * 16 + row * 4 + col) as f32);
            }
        }
    }

    #[test]
    fn odd_margin_biases_top_left() {
        // 2x2 structural grid in a 5x5 image: margin 1 before, 2 after.
        let model = model_with(vec![0, 1], Matrix::from_rows(&[[0.0], [1.0]]));
        let s = build_structural_layout(&association_matrix(&model.centroids), &GwOptions::default()).unwrap();
        let fl = FeatureLayout {
            modality: "m".into(),
            feature_names: (0..25).map(|j| j.to_string()).collect(),
            assoc: Matrix::identity(25),
            layout: LayoutPermutation::identity(25, 5),
            grid_side: 5,
        };
        let f = Matrix::zeros(2, 25);
        let r = Renderer::new(&model, &s, std::slice::from_ref(&fl), &[&f]).unwrap();
        assert_eq!(r.structural_cell(0).0.min(r.structural_cell(1).0), 1);
        let cells = [r.structural_cell(0), r.structural_cell(1)];
        assert!(cells.iter().all(|&(a, b)| (1..=2).contains(&a) && (1..=2).contains(&b)));
    }

    #[test]
    fn mismatched_layouts_are_rejected() {
        let model = model_with(vec![0, 1], Matrix::from_rows(&[[0.0], [1.0]]));
        let s = build_structural_layout(&association_matrix(&model.centroids), &GwOptions::default()).unwrap();
        let f = Matrix::zeros(2, 3);
        let names: Vec<String> = (0..3).map(|j| j.to_string()).collect();
        let fl = build_feature_layout(&f, &names, "m", None, &GwOptions::default()).unwrap();
        let wrong = Matrix::zeros(2, 4);
        assert!(matches!(
            Renderer::new(&model, &s, std::slice::from_ref(&fl), &[&wrong]),
            Err(ImagingError::LayoutMismatch(_))
        ));
        let short = Matrix::zeros(1, 3);
        assert!(Renderer::new(&model, &s, std::slice::from_ref(&fl), &[&short]).is_err());
    }

    #[test]
    fn sbm_images_satisfy_invariants() {
        let g = generate_sbm(&[5, 5, 5], 0.8, 0.05, 9, 2.0, 4).unwrap();
        let p = crate::community::community_count(g.k());
        let model = fit_communities(&g, p, 1, DEFAULT_MAX_ITER).unwrap();
        let s = build_structural_layout(&association_matrix(&model.centroids), &GwOptions::default()).unwrap();
        let fl = build_feature_layout(g.features(), g.feature_names(), "expr", None, &GwOptions::default()).unwrap();
        let set = render_all(&g, &model, &s, std::slice::from_ref(&fl), &[g.features()]).unwrap();
        assert_eq!(set.len(), 15);
        assert_eq!(set.channel_names, vec!["structure", "expr"]);
        for (i, img) in set.images.iter().enumerate() {
            let rep = model.members(model.assignment[i])[0];
            assert_eq!(img.tensor.channel(0), set.images[rep].tensor.channel(0));
            let pixel_sum: f64 = img.tensor.channel(1).iter().map(|&v| f64::from(v)).sum();
            let feature_sum: f64 = g.features().row(i).iter().map(|&v| f64::from(v as f32)).sum();
            assert!((pixel_sum - feature_sum).abs() <= 1e-12);
            for (j, &(r, c)) in fl.layout.item_to_cell.iter().enumerate() {
                assert_eq!(img.tensor.get(1, r, c), g.features()[(i, j)] as f32);
            }
        }
        let single = render_node(7, &g, &model, &s, std::slice::from_ref(&fl), &[g.features()]).unwrap();
        assert_eq!(single, set.images[7]);
    }
}
