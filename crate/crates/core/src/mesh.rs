//! Meshes, structured grid construction, text-format I/O, and Dirichlet
//! boundary specifications.
//!
//! Node ordering for structured grids is row-major with x fastest, so for a
//! 2D grid node `n` sits at `(ix, iy) = (n % nx, n / nx)`. Element corner
//! ordering follows the usual counterclockwise convention for quad4 and the
//! bottom-face-then-top-face convention for hex8.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fem::shape::{self, quadrature};

/// Supported element kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ElemKind {
    Quad4,
    Hex8,
    Tet4,
}

impl ElemKind {
    pub fn nodes_per_elem(self) -> usize {
        match self {
            ElemKind::Quad4 => 4,
            ElemKind::Hex8 => 8,
            ElemKind::Tet4 => 4,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            ElemKind::Quad4 => 2,
            ElemKind::Hex8 | ElemKind::Tet4 => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ElemKind::Quad4 => "quad4",
            ElemKind::Hex8 => "hex8",
            ElemKind::Tet4 => "tet4",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "quad4" => Some(ElemKind::Quad4),
            "hex8" => Some(ElemKind::Hex8),
            "tet4" => Some(ElemKind::Tet4),
            _ => None,
        }
    }
}

/// Provenance record kept by structured grids so they can be refined later.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredInfo {
    pub nodes_per_side: Vec<usize>,
    pub side_lengths: Vec<f64>,
}

/// An immutable finite-element mesh.
///
/// Coordinates are stored flat (`dim` entries per node). Boundary sets map a
/// name to an ordered list of node indices.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub dim: usize,
    pub elem_kind: ElemKind,
    coords: Vec<f64>,
    elements: Vec<usize>,
    boundary_sets: BTreeMap<String, Vec<usize>>,
    structured: Option<StructuredInfo>,
}

impl Mesh {
    /// Build a mesh from raw parts, validating every invariant.
    pub fn new(
        dim: usize,
        elem_kind: ElemKind,
        coords: Vec<f64>,
        elements: Vec<usize>,
        boundary_sets: BTreeMap<String, Vec<usize>>,
    ) -> Result<Self> {
        let mesh = Mesh {
            dim,
            elem_kind,
            coords,
            elements,
            boundary_sets,
            structured: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len() / self.elem_kind.nodes_per_elem()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Node indices of element `e`.
    pub fn element(&self, e: usize) -> &[usize] {
        let npe = self.elem_kind.nodes_per_elem();
        &self.elements[e * npe..(e + 1) * npe]
    }

    pub fn boundary_sets(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.boundary_sets
    }

    pub fn boundary_set(&self, name: &str) -> Option<&[usize]> {
        self.boundary_sets.get(name).map(|v| v.as_slice())
    }

    pub fn structured_info(&self) -> Option<&StructuredInfo> {
        self.structured.as_ref()
    }

    /// Gather the coordinates of one element into `out` (len = npe * dim).
    pub fn gather_coords(&self, e: usize, out: &mut [f64]) {
        for (a, &n) in self.element(e).iter().enumerate() {
            out[a * self.dim..(a + 1) * self.dim].copy_from_slice(self.node(n));
        }
    }

    /// Return a copy of this mesh with one extra boundary set.
    pub fn with_boundary_set(&self, name: &str, nodes: Vec<usize>) -> Result<Mesh> {
        let mut out = self.clone();
        let n = out.n_nodes();
        let mut seen = vec![false; n];
        for &i in &nodes {
            if i >= n {
                return Err(Error::MeshConstruction(format!(
                    "boundary set '{name}' references node {i} out of range"
                )));
            }
            if seen[i] {
                return Err(Error::MeshConstruction(format!(
                    "boundary set '{name}' contains duplicate node {i}"
                )));
            }
            seen[i] = true;
        }
        out.boundary_sets.insert(name.to_string(), nodes);
        Ok(out)
    }

    /// Axis-aligned bounding box as (min, max) per dimension.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for n in 0..self.n_nodes() {
            for d in 0..self.dim {
                let x = self.coords[n * self.dim + d];
                lo[d] = lo[d].min(x);
                hi[d] = hi[d].max(x);
            }
        }
        (lo, hi)
    }

    fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::MeshConstruction(format!("dim must be 2 or 3, got {}", self.dim)));
        }
        if self.elem_kind.dim() != self.dim {
            return Err(Error::MeshConstruction(format!(
                "element kind {} requires dim {}, mesh has dim {}",
                self.elem_kind.name(),
                self.elem_kind.dim(),
                self.dim
            )));
        }
        let n_nodes = self.n_nodes();
        if self.coords.len() % self.dim != 0 {
            return Err(Error::MeshConstruction("coordinate array length not a multiple of dim".into()));
        }
        let npe = self.elem_kind.nodes_per_elem();
        if self.elements.len() % npe != 0 {
            return Err(Error::MeshConstruction("connectivity length not a multiple of nodes-per-element".into()));
        }
        for e in 0..self.n_elements() {
            let conn = self.element(e);
            for (a, &n) in conn.iter().enumerate() {
                if n >= n_nodes {
                    return Err(Error::MeshConstruction(format!(
                        "element {e} references node {n} but mesh has {n_nodes} nodes"
                    )));
                }
                if conn[..a].contains(&n) {
                    return Err(Error::MeshConstruction(format!("element {e} repeats node {n}")));
                }
            }
        }
        for (name, set) in &self.boundary_sets {
            let mut seen = vec![false; n_nodes];
            for &n in set {
                if n >= n_nodes {
                    return Err(Error::MeshConstruction(format!(
                        "boundary set '{name}' references node {n} out of range"
                    )));
                }
                if seen[n] {
                    return Err(Error::MeshConstruction(format!(
                        "boundary set '{name}' contains duplicate node {n}"
                    )));
                }
                seen[n] = true;
            }
        }
        self.check_jacobians()?;
        Ok(())
    }

    /// Every element must have strictly positive det(J) at every quadrature
    /// point.
    fn check_jacobians(&self) -> Result<()> {
        let rule = quadrature(self.elem_kind);
        let npe = self.elem_kind.nodes_per_elem();
        let mut xe = vec![0.0; npe * self.dim];
        for e in 0..self.n_elements() {
            self.gather_coords(e, &mut xe);
            for pt in &rule.points {
                let (_, dn) = shape::shape_functions(self.elem_kind, pt);
                let det = shape::jacobian_det(self.dim, npe, &dn, &xe);
                if det <= 0.0 {
                    return Err(Error::InvertedElement { element: e, det });
                }
            }
        }
        Ok(())
    }

    /// Total mesh volume (sum of element volumes by quadrature).
    pub fn volume(&self) -> f64 {
        let rule = quadrature(self.elem_kind);
        let npe = self.elem_kind.nodes_per_elem();
        let mut xe = vec![0.0; npe * self.dim];
        let mut vol = 0.0;
        for e in 0..self.n_elements() {
            self.gather_coords(e, &mut xe);
            for (pt, &w) in rule.points.iter().zip(&rule.weights) {
                let (_, dn) = shape::shape_functions(self.elem_kind, pt);
                vol += w * shape::jacobian_det(self.dim, npe, &dn, &xe);
            }
        }
        vol
    }
}

/// Structured quad4/hex8 grid with auto-created face boundary sets
/// `x0, x1, y0, y1[, z0, z1]`.
pub fn build_structured_grid(
    dim: usize,
    nodes_per_side: &[usize],
    side_lengths: &[f64],
) -> Result<Mesh> {
    if dim != 2 && dim != 3 {
        return Err(Error::MeshConstruction(format!("dim must be 2 or 3, got {dim}")));
    }
    if nodes_per_side.len() != dim || side_lengths.len() != dim {
        return Err(Error::MeshConstruction(
            "nodes_per_side and side_lengths must have `dim` entries".into(),
        ));
    }
    for &n in nodes_per_side {
        if n < 2 {
            return Err(Error::MeshConstruction(format!("need at least 2 nodes per side, got {n}")));
        }
    }
    for &l in side_lengths {
        if !(l > 0.0) {
            return Err(Error::MeshConstruction(format!("side lengths must be positive, got {l}")));
        }
    }

    let (nx, ny, nz) = (
        nodes_per_side[0],
        nodes_per_side[1],
        if dim == 3 { nodes_per_side[2] } else { 1 },
    );
    let n_nodes = nx * ny * nz;
    let mut coords = Vec::with_capacity(n_nodes * dim);
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                coords.push(side_lengths[0] * ix as f64 / (nx - 1) as f64);
                coords.push(side_lengths[1] * iy as f64 / (ny - 1) as f64);
                if dim == 3 {
                    coords.push(side_lengths[2] * iz as f64 / (nz - 1) as f64);
                }
            }
        }
    }

    let node = |ix: usize, iy: usize, iz: usize| iz * nx * ny + iy * nx + ix;
    let mut elements = Vec::new();
    if dim == 2 {
        for iy in 0..ny - 1 {
            for ix in 0..nx - 1 {
                elements.extend_from_slice(&[
                    node(ix, iy, 0),
                    node(ix + 1, iy, 0),
                    node(ix + 1, iy + 1, 0),
                    node(ix, iy + 1, 0),
                ]);
            }
        }
    } else {
        for iz in 0..nz - 1 {
            for iy in 0..ny - 1 {
                for ix in 0..nx - 1 {
                    elements.extend_from_slice(&[
                        node(ix, iy, iz),
                        node(ix + 1, iy, iz),
                        node(ix + 1, iy + 1, iz),
                        node(ix, iy + 1, iz),
                        node(ix, iy, iz + 1),
                        node(ix + 1, iy, iz + 1),
                        node(ix + 1, iy + 1, iz + 1),
                        node(ix, iy + 1, iz + 1),
                    ]);
                }
            }
        }
    }

    let mut boundary_sets = BTreeMap::new();
    let mut face = |name: &str, pred: &dyn Fn(usize, usize, usize) -> bool| {
        let mut set = Vec::new();
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    if pred(ix, iy, iz) {
                        set.push(node(ix, iy, iz));
                    }
                }
            }
        }
        boundary_sets.insert(name.to_string(), set);
    };
    face("x0", &|ix, _, _| ix == 0);
    face("x1", &|ix, _, _| ix == nx - 1);
    face("y0", &|_, iy, _| iy == 0);
    face("y1", &|_, iy, _| iy == ny - 1);
    if dim == 3 {
        face("z0", &|_, _, iz| iz == 0);
        face("z1", &|_, _, iz| iz == nz - 1);
    }

    let elem_kind = if dim == 2 { ElemKind::Quad4 } else { ElemKind::Hex8 };
    let mut mesh = Mesh::new(dim, elem_kind, coords, elements, boundary_sets)?;
    mesh.structured = Some(StructuredInfo {
        nodes_per_side: nodes_per_side.to_vec(),
        side_lengths: side_lengths.to_vec(),
    });
    Ok(mesh)
}

/// Rebuild a structured grid with `factor` times the nodes per side on the
/// same physical domain, so an N-node-per-side grid becomes factor*N. A
/// factor of 1 returns an identical grid.
pub fn refine_structured(mesh: &Mesh, factor: usize) -> Result<Mesh> {
    let info = mesh.structured.as_ref().ok_or_else(|| {
        Error::Unsupported("refine_structured requires a grid built by build_structured_grid".into())
    })?;
    if factor < 1 {
        return Err(Error::MeshConstruction("refinement factor must be >= 1".into()));
    }
    let nps: Vec<usize> = info.nodes_per_side.iter().map(|&n| n * factor).collect();
    build_structured_grid(mesh.dim, &nps, &info.side_lengths)
}

/// Serialize a mesh to the line-oriented text format.
///
/// Format: header `mesh <dim> <elem_kind>`, section `nodes <count>` with one
/// coordinate row per node, section `elements <count>` with 0-based
/// connectivity rows, and one `bset <name> <count>` section per boundary
/// set. `#` starts a comment. Floats are printed with the shortest
/// round-trippable representation, so save/load is bit-exact.
pub fn save_mesh(mesh: &Mesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mesh {} {}", mesh.dim, mesh.elem_kind.name());
    let _ = writeln!(s, "nodes {}", mesh.n_nodes());
    for n in 0..mesh.n_nodes() {
        let row: Vec<String> = mesh.node(n).iter().map(|x| format!("{x}")).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    let _ = writeln!(s, "elements {}", mesh.n_elements());
    for e in 0..mesh.n_elements() {
        let row: Vec<String> = mesh.element(e).iter().map(|i| i.to_string()).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    for (name, set) in mesh.boundary_sets() {
        let _ = writeln!(s, "bset {} {}", name, set.len());
        let row: Vec<String> = set.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

/// Parse the text format produced by [`save_mesh`]. Errors carry the
/// offending 1-based line number.
pub fn load_mesh(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let parse_err = |line: usize, msg: &str| Error::MeshParse { line, msg: msg.to_string() };

    let (line, header) = lines.next().ok_or_else(|| parse_err(1, "empty mesh file"))?;
    let mut hw = header.split_whitespace();
    if hw.next() != Some("mesh") {
        return Err(parse_err(line, "expected header 'mesh <dim> <elem_kind>'"));
    }
    let dim: usize = hw
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err(line, "bad dimension in header"))?;
    let elem_kind = hw
        .next()
        .and_then(ElemKind::from_name)
        .ok_or_else(|| parse_err(line, "unknown element kind in header"))?;

    let (line, nodes_hdr) = lines.next().ok_or_else(|| parse_err(line, "missing nodes section"))?;
    let mut nw = nodes_hdr.split_whitespace();
    if nw.next() != Some("nodes") {
        return Err(parse_err(line, "expected 'nodes <count>'"));
    }
    let n_nodes: usize = nw
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err(line, "bad node count"))?;

    let mut coords = Vec::with_capacity(n_nodes * dim);
    for _ in 0..n_nodes {
        let (line, row) = lines.next().ok_or_else(|| parse_err(line, "unexpected end of nodes section"))?;
        let vals: Vec<f64> = row
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(line, "bad coordinate"))?;
        if vals.len() != dim {
            return Err(parse_err(line, "wrong number of coordinates"));
        }
        coords.extend_from_slice(&vals);
    }

    let (line, elems_hdr) = lines.next().ok_or_else(|| parse_err(line, "missing elements section"))?;
    let mut ew = elems_hdr.split_whitespace();
    if ew.next() != Some("elements") {
        return Err(parse_err(line, "expected 'elements <count>'"));
    }
    let n_elems: usize = ew
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err(line, "bad element count"))?;

    let npe = elem_kind.nodes_per_elem();
    let mut elements = Vec::with_capacity(n_elems * npe);
    for _ in 0..n_elems {
        let (line, row) = lines.next().ok_or_else(|| parse_err(line, "unexpected end of elements section"))?;
        let vals: Vec<usize> = row
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(line, "bad node index"))?;
        if vals.len() != npe {
            return Err(parse_err(line, "wrong number of element nodes"));
        }
        elements.extend_from_slice(&vals);
    }

    let mut boundary_sets = BTreeMap::new();
    while let Some((line, hdr)) = lines.next() {
        let mut bw = hdr.split_whitespace();
        if bw.next() != Some("bset") {
            return Err(parse_err(line, "expected 'bset <name> <count>'"));
        }
        let name = bw.next().ok_or_else(|| parse_err(line, "missing boundary set name"))?;
        let count: usize = bw
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(line, "bad boundary set count"))?;
        let mut set = Vec::with_capacity(count);
        while set.len() < count {
            let (line, row) = lines.next().ok_or_else(|| parse_err(line, "unexpected end of bset section"))?;
            for t in row.split_whitespace() {
                let idx: usize = t.parse().map_err(|_| parse_err(line, "bad node index in bset"))?;
                set.push(idx);
            }
        }
        if set.len() != count {
            return Err(parse_err(line, "boundary set longer than declared"));
        }
        if boundary_sets.insert(name.to_string(), set).is_some() {
            return Err(parse_err(line, "duplicate boundary set name"));
        }
    }

    Mesh::new(dim, elem_kind, coords, elements, boundary_sets)
}

/// Solution field components addressable by Dirichlet conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum FieldComponent {
    T,
    Ux,
    Uy,
    Uz,
}

impl FieldComponent {
    /// Displacement component index, or None for the temperature field.
    pub fn displacement_axis(self) -> Option<usize> {
        match self {
            FieldComponent::T => None,
            FieldComponent::Ux => Some(0),
            FieldComponent::Uy => Some(1),
            FieldComponent::Uz => Some(2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldComponent::T => "T",
            FieldComponent::Ux => "Ux",
            FieldComponent::Uy => "Uy",
            FieldComponent::Uz => "Uz",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "T" => Some(FieldComponent::T),
            "Ux" => Some(FieldComponent::Ux),
            "Uy" => Some(FieldComponent::Uy),
            "Uz" => Some(FieldComponent::Uz),
            _ => None,
        }
    }
}

/// A boundary value: either a fixed scalar or a parameter to be filled in
/// before any solve or loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum BcValue {
    Fixed(f64),
    Parametric(ParametricTag),
}

/// Serde helper so `value = "parametric"` round-trips through config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ParametricTag {
    #[serde(rename = "parametric")]
    Parametric,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DirichletEntry {
    pub bset: String,
    pub field: FieldComponent,
    pub value: BcValue,
}

/// Dirichlet boundary conditions as (boundary set, field, value) rows.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DirichletSpec {
    pub entries: Vec<DirichletEntry>,
}

impl DirichletSpec {
    pub fn new(entries: Vec<DirichletEntry>) -> Self {
        DirichletSpec { entries }
    }

    /// Convenience constructor from (bset, field, value) triples.
    pub fn fixed(rows: &[(&str, FieldComponent, f64)]) -> Self {
        DirichletSpec {
            entries: rows
                .iter()
                .map(|&(b, f, v)| DirichletEntry {
                    bset: b.to_string(),
                    field: f,
                    value: BcValue::Fixed(v),
                })
                .collect(),
        }
    }

    pub fn has_parametric(&self) -> bool {
        self.entries.iter().any(|e| matches!(e.value, BcValue::Parametric(_)))
    }

    /// Replace every parametric entry with the given scalar.
    pub fn resolve(&self, parameter: f64) -> Self {
        DirichletSpec {
            entries: self
                .entries
                .iter()
                .map(|e| DirichletEntry {
                    value: match e.value {
                        BcValue::Parametric(_) => BcValue::Fixed(parameter),
                        v => v,
                    },
                    ..e.clone()
                })
                .collect(),
        }
    }

    /// Expand to per-DOF constraints. Fails on unknown boundary sets,
    /// duplicate (node, field) pairs, or unresolved parametric entries.
    pub fn expand(&self, mesh: &Mesh) -> Result<ExpandedBcs> {
        let n = mesh.n_nodes();
        let dim = mesh.dim;
        let mut thermal: Vec<Option<f64>> = vec![None; n];
        let mut mechanical: Vec<Option<f64>> = vec![None; n * dim];
        for entry in &self.entries {
            let value = match entry.value {
                BcValue::Fixed(v) => v,
                BcValue::Parametric(_) => {
                    return Err(Error::UnresolvedParametric(format!(
                        "{}/{}",
                        entry.bset,
                        entry.field.name()
                    )))
                }
            };
            let set = mesh
                .boundary_set(&entry.bset)
                .ok_or_else(|| Error::BcConflict(format!("unknown boundary set '{}'", entry.bset)))?;
            match entry.field.displacement_axis() {
                None => {
                    for &node in set {
                        if thermal[node].is_some() {
                            return Err(Error::BcConflict(format!(
                                "node {node} receives more than one T constraint"
                            )));
                        }
                        thermal[node] = Some(value);
                    }
                }
                Some(axis) => {
                    if axis >= dim {
                        return Err(Error::BcConflict(format!(
                            "{} constraint on a {dim}D mesh",
                            entry.field.name()
                        )));
                    }
                    for &node in set {
                        let dof = node * dim + axis;
                        if mechanical[dof].is_some() {
                            return Err(Error::BcConflict(format!(
                                "node {node} receives more than one {} constraint",
                                entry.field.name()
                            )));
                        }
                        mechanical[dof] = Some(value);
                    }
                }
            }
        }
        let thermal: Vec<(usize, f64)> = thermal
            .into_iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
            .collect();
        let mechanical: Vec<(usize, f64)> = mechanical
            .into_iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
            .collect();
        Ok(ExpandedBcs { thermal, mechanical })
    }
}

/// Per-DOF Dirichlet constraints, sorted by index. Thermal constraints
/// address the nodal temperature vector; mechanical constraints address the
/// interleaved displacement vector.
#[derive(Debug, Clone, Default)]
pub struct ExpandedBcs {
    pub thermal: Vec<(usize, f64)>,
    pub mechanical: Vec<(usize, f64)>,
}

impl ExpandedBcs {
    pub fn thermal_mask(&self, n_nodes: usize) -> Vec<bool> {
        let mut mask = vec![false; n_nodes];
        for &(i, _) in &self.thermal {
            mask[i] = true;
        }
        mask
    }

    pub fn mechanical_mask(&self, n_dofs: usize) -> Vec<bool> {
        let mut mask = vec![false; n_dofs];
        for &(i, _) in &self.mechanical {
            mask[i] = true;
        }
        mask
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn structured_grid_3x3() {
        let m = build_structured_grid(2, &[3, 3], &[1.0, 1.0]).unwrap();
        assert_eq!(m.n_nodes(), 9);
        assert_eq!(m.n_elements(), 4);
        assert_eq!(m.boundary_set("x0").unwrap(), &[0, 3, 6]);
        assert_eq!(m.boundary_set("x1").unwrap(), &[2, 5, 8]);
        assert_eq!(m.element(0), &[0, 1, 4, 3]);
    }

    #[test]
    fn structured_grid_paper_sizes() {
        let m = build_structured_grid(2, &[42, 42], &[1.0, 1.0]).unwrap();
        assert_eq!(m.n_nodes(), 1764);
        assert_eq!(m.n_elements(), 1681);
        let m3 = build_structured_grid(3, &[22, 22, 22], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(m3.n_nodes(), 10648);
        assert_eq!(m3.n_elements(), 9261);
    }

    #[test]
    fn structured_grid_rejects_bad_input() {
        assert!(build_structured_grid(2, &[1, 3], &[1.0, 1.0]).is_err());
        assert!(build_structured_grid(2, &[3, 3], &[0.0, 1.0]).is_err());
        assert!(build_structured_grid(2, &[3, 3], &[-1.0, 1.0]).is_err());
    }

    #[test]
    fn refine_doubles_nodes_per_side() {
        let m = build_structured_grid(2, &[42, 42], &[1.0, 1.0]).unwrap();
        let r = refine_structured(&m, 2).unwrap();
        assert_eq!(r.structured_info().unwrap().nodes_per_side, vec![84, 84]);
        assert_eq!(r.n_nodes(), 84 * 84);

        let m3 = build_structured_grid(3, &[22, 22, 22], &[1.0, 1.0, 1.0]).unwrap();
        let r3 = refine_structured(&m3, 2).unwrap();
        assert_eq!(r3.structured_info().unwrap().nodes_per_side, vec![44, 44, 44]);
    }

    #[test]
    fn refine_factor_one_is_identity() {
        let m = build_structured_grid(2, &[5, 4], &[2.0, 1.0]).unwrap();
        let r = refine_structured(&m, 1).unwrap();
        assert_eq!(m.coords(), r.coords());
    }

    #[test]
    fn refine_preserves_bounding_box() {
        let m = build_structured_grid(3, &[4, 5, 6], &[1.5, 2.5, 0.5]).unwrap();
        let r = refine_structured(&m, 3).unwrap();
        assert_eq!(m.bounding_box(), r.bounding_box());
    }

    #[test]
    fn refine_rejects_unstructured() {
        let text = "mesh 2 quad4\nnodes 4\n0 0\n1 0\n1 1\n0 1\nelements 1\n0 1 2 3\n";
        let m = load_mesh(text).unwrap();
        assert!(matches!(refine_structured(&m, 2), Err(Error::Unsupported(_))));
    }

    #[test]
    fn load_minimal_quad_file() {
        let text = "# demo\nmesh 2 quad4\nnodes 4\n0 0\n1 0\n1 1\n0 1\nelements 1\n0 1 2 3\nbset left 2\n0 3\n";
        let m = load_mesh(text).unwrap();
        assert_eq!(m.n_nodes(), 4);
        assert_eq!(m.n_elements(), 1);
        assert_eq!(m.boundary_set("left").unwrap(), &[0, 3]);
    }

    #[test]
    fn load_rejects_out_of_range_index() {
        let text = "mesh 2 quad4\nnodes 4\n0 0\n1 0\n1 1\n0 1\nelements 1\n0 1 2 99\n";
        assert!(load_mesh(text).is_err());
    }

    #[test]
    fn load_rejects_inverted_tet() {
        // Signed volume of this tetrahedron, by hand:
        // V = det([b-a; c-a; d-a]) / 6 with a=(0,0,0), b=(1,0,0), c=(0,1,0),
        // d=(0,0,-1)  =>  det = -1, V = -1/6 < 0.
        let text = "mesh 3 tet4\nnodes 4\n0 0 0\n1 0 0\n0 1 0\n0 0 -1\nelements 1\n0 1 2 3\n";
        match load_mesh(text) {
            Err(Error::InvertedElement { .. }) => {}
            other => panic!("expected inverted element error, got {other:?}"),
        }
    }

    #[test]
    fn save_load_round_trip_bit_exact() {
        let m = build_structured_grid(2, &[4, 3], &[1.0 / 3.0, 0.7]).unwrap();
        let text = save_mesh(&m);
        let m2 = load_mesh(&text).unwrap();
        assert_eq!(m.coords(), m2.coords());
        assert_eq!(m.element(2), m2.element(2));
        assert_eq!(m.boundary_sets(), m2.boundary_sets());
    }

    #[test]
    fn dirichlet_expansion_and_conflicts() {
        let m = build_structured_grid(2, &[3, 3], &[1.0, 1.0]).unwrap();
        let spec = DirichletSpec::fixed(&[("x0", FieldComponent::T, 0.5)]);
        let bcs = spec.expand(&m).unwrap();
        assert_eq!(bcs.thermal, vec![(0, 0.5), (3, 0.5), (6, 0.5)]);

        let dup = DirichletSpec::fixed(&[
            ("x0", FieldComponent::T, 0.5),
            ("x0", FieldComponent::T, 0.5),
        ]);
        assert!(matches!(dup.expand(&m), Err(Error::BcConflict(_))));

        let uz = DirichletSpec::fixed(&[("x0", FieldComponent::Uz, 0.0)]);
        assert!(uz.expand(&m).is_err());
    }

    #[test]
    fn parametric_must_be_resolved() {
        let m = build_structured_grid(2, &[3, 3], &[1.0, 1.0]).unwrap();
        let spec = DirichletSpec::new(vec![DirichletEntry {
            bset: "x0".into(),
            field: FieldComponent::T,
            value: BcValue::Parametric(ParametricTag::Parametric),
        }]);
        assert!(matches!(spec.expand(&m), Err(Error::UnresolvedParametric(_))));
        let resolved = spec.resolve(0.25);
        let bcs = resolved.expand(&m).unwrap();
        assert_eq!(bcs.thermal[0], (0, 0.25));
    }

    proptest! {
        #[test]
        fn grid_volume_matches_side_product(
            nx in 2usize..7, ny in 2usize..7,
            lx in 0.1f64..3.0, ly in 0.1f64..3.0,
        ) {
            let m = build_structured_grid(2, &[nx, ny], &[lx, ly]).unwrap();
            let vol = m.volume();
            prop_assert!(((vol - lx * ly) / (lx * ly)).abs() < 1e-12);
        }

        #[test]
        fn grid_volume_matches_side_product_3d(
            n in 2usize..5,
            lx in 0.1f64..2.0, ly in 0.1f64..2.0, lz in 0.1f64..2.0,
        ) {
            let m = build_structured_grid(3, &[n, n, n], &[lx, ly, lz]).unwrap();
            let vol = m.volume();
            let exact = lx * ly * lz;
            prop_assert!(((vol - exact) / exact).abs() < 1e-12);
        }
    }
}
