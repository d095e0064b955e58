//! Polytope action sets.
//!
//! An action set carries both descriptions of its convex hull: the finite
//! vertex list (the actions the learner may play) and a halfspace list
//! `{x : a_i . x <= b_i}`. Halfspace normals are normalized to unit length at
//! construction so every slack is a Euclidean distance to its facet plane.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack below which a point counts as violating a halfspace.
pub const MEMBERSHIP_TOL: f64 = 1e-10;
/// Slack at or below which a constraint is treated as active (zero slack).
pub const SLACK_ZERO_TOL: f64 = 1e-12;
/// L-infinity error allowed when rebuilding a point from its vertex weights.
pub const RECONSTRUCTION_TOL: f64 = 1e-9;
/// Required slack of the vertex centroid for the set to count as full-dimensional.
pub const INTERIOR_SLACK_TOL: f64 = 1e-8;
/// Slack under which a vertex is considered to lie on a face during decomposition.
const FACE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("action set needs at least one vertex and one halfspace")]
    Empty,
    #[error("halfspace {0} has a zero normal")]
    DegenerateHalfspace(usize),
    #[error("vertex {vertex} violates halfspace {halfspace} by {violation:e}")]
    VertexOutsideHull { vertex: usize, halfspace: usize, violation: f64 },
    #[error("vertex {vertex} has norm {norm} > 1")]
    VertexOutsideUnitBall { vertex: usize, norm: f64 },
    #[error("action set is not full-dimensional (centroid slack {0:e})")]
    NotFullDimensional(f64),
    #[error("pole violates halfspace {halfspace} by {violation:e}")]
    PoleOutsideSet { halfspace: usize, violation: f64 },
    #[error("gauge undefined: point leaves the set through zero-slack halfspace {0}")]
    GaugeUndefined(usize),
    #[error("point is not in the convex hull of the vertices (residual {0:e})")]
    NotInHull(f64),
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
}

/// One halfspace `normal . x <= offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

/// Plain document form of an action set, used for (de)serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSetDocument {
    pub dimension: usize,
    pub vertices: Vec<Vec<f64>>,
    pub halfspaces: Vec<Halfspace>,
}

/// Finite action set together with a halfspace description of its hull.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ActionSetDocument", into = "ActionSetDocument")]
pub struct PolytopeActionSet {
    dimension: usize,
    vertices: Vec<DVector<f64>>,
    normals: DMatrix<f64>,
    offsets: DVector<f64>,
}

impl TryFrom<ActionSetDocument> for PolytopeActionSet {
    type Error = GeometryError;

    fn try_from(doc: ActionSetDocument) -> Result<Self, Self::Error> {
        if let Some(v) = doc.vertices.iter().find(|v| v.len() != doc.dimension) {
            return Err(GeometryError::DimensionMismatch { expected: doc.dimension, got: v.len() });
        }
        if let Some(h) = doc.halfspaces.iter().find(|h| h.normal.len() != doc.dimension) {
            return Err(GeometryError::DimensionMismatch {
                expected: doc.dimension,
                got: h.normal.len(),
            });
        }
        let vertices = doc.vertices.into_iter().map(DVector::from_vec).collect();
        let halfspaces = doc
            .halfspaces
            .into_iter()
            .map(|h| (DVector::from_vec(h.normal), h.offset))
            .collect();
        PolytopeActionSet::new(vertices, halfspaces)
    }
}

impl From<PolytopeActionSet> for ActionSetDocument {
    fn from(set: PolytopeActionSet) -> Self {
        set.to_document()
    }
}

impl PolytopeActionSet {
    /// Builds and validates an action set whose vertices lie in the unit ball.
    pub fn new(
        vertices: Vec<DVector<f64>>,
        halfspaces: Vec<(DVector<f64>, f64)>,
    ) -> Result<Self, GeometryError> {
        let set = Self::new_unrestricted(vertices, halfspaces)?;
        for (i, v) in set.vertices.iter().enumerate() {
            let norm = v.norm();
            if norm > 1.0 + 1e-12 {
                return Err(GeometryError::VertexOutsideUnitBall { vertex: i, norm });
            }
        }
        Ok(set)
    }

    /// Same validation as [`PolytopeActionSet::new`] minus the unit-ball bound.
    ///
    /// Useful for pure geometry (e.g. the unscaled unit cube); the learner and
    /// environments reject such sets.
    pub fn new_unrestricted(
        vertices: Vec<DVector<f64>>,
        halfspaces: Vec<(DVector<f64>, f64)>,
    ) -> Result<Self, GeometryError> {
        if vertices.is_empty() || halfspaces.is_empty() {
            return Err(GeometryError::Empty);
        }
        let dimension = vertices[0].len();
        if dimension == 0 {
            return Err(GeometryError::Empty);
        }
        for v in &vertices {
            if v.len() != dimension {
                return Err(GeometryError::DimensionMismatch { expected: dimension, got: v.len() });
            }
        }

        let mut unique: Vec<DVector<f64>> = Vec::with_capacity(vertices.len());
        for v in vertices {
            if !unique.iter().any(|u| (u - &v).amax() <= SLACK_ZERO_TOL) {
                unique.push(v);
            }
        }

        let m = halfspaces.len();
        let mut normals = DMatrix::<f64>::zeros(m, dimension);
        let mut offsets = DVector::<f64>::zeros(m);
        for (i, (a, b)) in halfspaces.iter().enumerate() {
            if a.len() != dimension {
                return Err(GeometryError::DimensionMismatch { expected: dimension, got: a.len() });
            }
            let norm = a.norm();
            if norm == 0.0 || !norm.is_finite() {
                return Err(GeometryError::DegenerateHalfspace(i));
            }
            // already-unit normals are kept bit-for-bit so documents round-trip
            let norm = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON { 1.0 } else { norm };
            normals.set_row(i, &(a / norm).transpose());
            offsets[i] = b / norm;
        }

        let set = PolytopeActionSet { dimension, vertices: unique, normals, offsets };
        for (vi, v) in set.vertices.iter().enumerate() {
            let slack = set.slacks(v);
            if let Some((hi, s)) = slack.iter().enumerate().find(|(_, s)| **s < -MEMBERSHIP_TOL) {
                return Err(GeometryError::VertexOutsideHull {
                    vertex: vi,
                    halfspace: hi,
                    violation: -s,
                });
            }
        }
        let centroid_slack = set.slacks(&set.vertex_centroid()).min();
        if centroid_slack < INTERIOR_SLACK_TOL {
            return Err(GeometryError::NotFullDimensional(centroid_slack));
        }
        Ok(set)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    pub fn vertex(&self, index: usize) -> &DVector<f64> {
        &self.vertices[index]
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_halfspaces(&self) -> usize {
        self.offsets.len()
    }

    /// Unit-norm halfspace normals, one per row.
    pub fn normals(&self) -> &DMatrix<f64> {
        &self.normals
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    pub fn halfspace(&self, index: usize) -> (DVector<f64>, f64) {
        (self.normals.row(index).transpose(), self.offsets[index])
    }

    /// `b - A x`, one slack per halfspace.
    pub fn slacks(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.offsets - &self.normals * x
    }

    pub fn vertex_centroid(&self) -> DVector<f64> {
        let sum = self
            .vertices
            .iter()
            .fold(DVector::zeros(self.dimension), |acc, v| acc + v);
        sum / self.vertices.len() as f64
    }

    pub fn max_vertex_norm(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn to_document(&self) -> ActionSetDocument {
        ActionSetDocument {
            dimension: self.dimension,
            vertices: self.vertices.iter().map(|v| v.as_slice().to_vec()).collect(),
            halfspaces: (0..self.num_halfspaces())
                .map(|i| Halfspace {
                    normal: self.normals.row(i).iter().copied().collect(),
                    offset: self.offsets[i],
                })
                .collect(),
        }
    }

    /// True iff every halfspace slack at `x` is at least `-tol`.
    pub fn membership(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dimension && self.slacks(x).iter().all(|s| *s >= -tol)
    }

    /// Minkowski gauge of `x` with pole `pole`:
    /// the smallest `r > 0` with `pole + (x - pole) / r` inside the set.
    ///
    /// Halfspaces with zero slack at the pole contribute nothing as long as the
    /// displacement does not push through them.
    pub fn minkowski_gauge(&self, pole: &DVector<f64>, x: &DVector<f64>) -> Result<f64, GeometryError> {
        let pole_slack = self.slacks(pole);
        let displacement = &self.normals * (x - pole);
        let mut gauge = 0.0_f64;
        for i in 0..self.num_halfspaces() {
            let slack = pole_slack[i];
            if slack < -MEMBERSHIP_TOL {
                return Err(GeometryError::PoleOutsideSet { halfspace: i, violation: -slack });
            }
            let num = displacement[i];
            if slack <= SLACK_ZERO_TOL {
                if num > SLACK_ZERO_TOL {
                    return Err(GeometryError::GaugeUndefined(i));
                }
                continue;
            }
            gauge = gauge.max(num.max(0.0) / slack);
        }
        Ok(gauge.clamp(0.0, 1.0))
    }

    /// Writes `point` as a convex combination of at most `d + 1` vertices.
    ///
    /// Walks down the face lattice: pick a vertex of the current face, shoot
    /// the ray from it through the current point until it leaves the face, and
    /// recurse on the (strictly smaller) face where it exits. Each step fixes
    /// the weight of one vertex.
    pub fn caratheodory_decompose(&self, point: &DVector<f64>) -> Result<ConvexCombination, GeometryError> {
        if point.len() != self.dimension {
            return Err(GeometryError::DimensionMismatch { expected: self.dimension, got: point.len() });
        }
        let entry_slack = self.slacks(point);
        let worst = entry_slack.min();
        if worst < -MEMBERSHIP_TOL {
            return Err(GeometryError::NotInHull(-worst));
        }

        let m = self.num_halfspaces();
        let mut active: Vec<bool> = entry_slack.iter().map(|s| *s <= FACE_TOL).collect();
        let vertex_slacks: Vec<DVector<f64>> = self.vertices.iter().map(|v| self.slacks(v)).collect();

        let mut current = point.clone();
        let mut mass = 1.0_f64;
        let mut support: Vec<(usize, f64)> = Vec::with_capacity(self.dimension + 1);

        for _ in 0..=self.dimension {
            // farthest vertex of the current face keeps the ray well conditioned
            let on_face: Vec<usize> = (0..self.vertices.len())
                .filter(|&j| (0..m).all(|i| !active[i] || vertex_slacks[j][i] <= FACE_TOL))
                .collect();
            let Some((vi, dist)) = on_face
                .iter()
                .map(|&j| (j, (&self.vertices[j] - &current).norm()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
            else {
                return Err(GeometryError::NotInHull(f64::NAN));
            };
            let v = &self.vertices[vi];
            if dist <= SLACK_ZERO_TOL || on_face.len() == 1 {
                support.push((vi, mass));
                mass = 0.0;
                break;
            }
            let dir = &current - v;
            let rates = &self.normals * &dir;
            let mut exit = f64::INFINITY;
            for i in 0..m {
                if active[i] || rates[i] <= 1e-15 {
                    continue;
                }
                exit = exit.min(vertex_slacks[vi][i] / rates[i]);
            }
            if !exit.is_finite() || exit < 1.0 - 1e-9 {
                return Err(GeometryError::NotInHull(f64::NAN));
            }
            let exit = exit.max(1.0);
            support.push((vi, mass * (1.0 - 1.0 / exit)));
            mass /= exit;
            current = v + dir * exit;
            let slack = self.slacks(&current);
            for i in 0..m {
                if slack[i] <= FACE_TOL {
                    active[i] = true;
                }
            }
        }
        if mass > 0.0 {
            // face walk ended on a single point that was not matched to a vertex
            return Err(GeometryError::NotInHull(mass));
        }

        let combo = ConvexCombination::from_weights(support);
        let residual = (self.combination_point(&combo) - point).amax();
        if residual > RECONSTRUCTION_TOL {
            return Err(GeometryError::NotInHull(residual));
        }
        Ok(combo)
    }

    /// `sum_j w_j v_j` for a combination over this set's vertices.
    pub fn combination_point(&self, combo: &ConvexCombination) -> DVector<f64> {
        combo
            .support()
            .iter()
            .fold(DVector::zeros(self.dimension), |acc, (j, w)| acc + &self.vertices[*j] * *w)
    }
}

/// Vertex lottery whose mean is a point of the hull.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexCombination {
    support: Vec<(usize, f64)>,
}

impl ConvexCombination {
    /// Merges duplicate indices, drops zero weights and renormalizes to sum 1.
    pub fn from_weights(weights: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut merged: Vec<(usize, f64)> = Vec::new();
        for (j, w) in weights {
            let w = w.max(0.0);
            match merged.iter_mut().find(|(k, _)| *k == j) {
                Some(entry) => entry.1 += w,
                None => merged.push((j, w)),
            }
        }
        merged.retain(|(_, w)| *w > 0.0);
        let total: f64 = merged.iter().map(|(_, w)| w).sum();
        if total > 0.0 {
            for entry in &mut merged {
                entry.1 /= total;
            }
        }
        ConvexCombination { support: merged }
    }

    pub fn support(&self) -> &[(usize, f64)] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Picks a vertex index with probability equal to its weight, given `u` uniform on [0, 1).
    pub fn sample_with(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (j, w) in &self.support {
            acc += w;
            if u < acc {
                return *j;
            }
        }
        self.support.last().map(|(j, _)| *j).expect("empty combination")
    }
}

/// Canonical action sets scaled into the unit ball.
///
/// - `hypercube`: `[0, 1/sqrt(d)]^d`, `2^d` vertices, `2d` halfspaces.
/// - `simplex`: `conv{0, e_1, ..., e_d}`, `d + 1` vertices and halfspaces.
/// - `scaled-simplex`: the simplex recentred on its centroid and stretched so
///   the farthest vertex has unit norm.
pub fn builtin_instance(name: &str, d: usize) -> Result<PolytopeActionSet, GeometryError> {
    if d == 0 {
        return Err(GeometryError::Empty);
    }
    match name {
        "hypercube" => Ok(box_set(d, 1.0 / (d as f64).sqrt(), PolytopeActionSet::new)?),
        "simplex" => simplex_set(d, None),
        "scaled-simplex" => {
            let c = DVector::from_element(d, 1.0 / (d as f64 + 1.0));
            let farthest = std::iter::once(DVector::zeros(d))
                .chain((0..d).map(|i| unit(d, i)))
                .map(|v| (v - &c).norm())
                .fold(0.0, f64::max);
            simplex_set(d, Some((c, 1.0 / farthest)))
        }
        other => Err(GeometryError::UnknownInstance(other.to_string())),
    }
}

/// The unscaled unit cube `[0, 1]^d` (vertices leave the unit ball for d > 1).
pub fn unit_box(d: usize) -> PolytopeActionSet {
    box_set(d, 1.0, PolytopeActionSet::new_unrestricted).expect("unit box is valid")
}

fn box_set(
    d: usize,
    side: f64,
    build: fn(Vec<DVector<f64>>, Vec<(DVector<f64>, f64)>) -> Result<PolytopeActionSet, GeometryError>,
) -> Result<PolytopeActionSet, GeometryError> {
    assert!(d < 24, "hypercube vertex enumeration is exponential in d");
    let vertices = (0..(1usize << d))
        .map(|mask| DVector::from_iterator(d, (0..d).map(|i| if mask >> i & 1 == 1 { side } else { 0.0 })))
        .collect();
    let mut halfspaces = Vec::with_capacity(2 * d);
    for i in 0..d {
        halfspaces.push((-unit(d, i), 0.0));
        halfspaces.push((unit(d, i), side));
    }
    build(vertices, halfspaces)
}

fn simplex_set(d: usize, transform: Option<(DVector<f64>, f64)>) -> Result<PolytopeActionSet, GeometryError> {
    let mut vertices: Vec<DVector<f64>> = std::iter::once(DVector::zeros(d)).chain((0..d).map(|i| unit(d, i))).collect();
    let mut halfspaces: Vec<(DVector<f64>, f64)> = (0..d).map(|i| (-unit(d, i), 0.0)).collect();
    halfspaces.push((DVector::from_element(d, 1.0), 1.0));
    if let Some((center, scale)) = transform {
        // x = scale (y - center)  =>  a.y <= b  becomes  a.x <= scale (b - a.center)
        vertices = vertices.into_iter().map(|v| (v - &center) * scale).collect();
        halfspaces = halfspaces
            .into_iter()
            .map(|(a, b)| {
                let shifted = scale * (b - a.dot(&center));
                (a, shifted)
            })
            .collect();
    }
    PolytopeActionSet::new(vertices, halfspaces)
}

fn unit(d: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(d);
    e[i] = 1.0;
    e
}
