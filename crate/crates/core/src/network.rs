//! Rail graph, normalized Laplacian and spectral station/line coordinates.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, Matrix, JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE};

pub const EMBEDDING_DIM: usize = 8;

/// Eigenvalues below this are treated as belonging to the null space of the Laplacian.
pub const TRIVIAL_EIGENVALUE: f64 = 1e-9;
/// Embedding rows with a smaller norm are round-off and are zeroed instead of normalized.
pub const NULL_ROW_NORM: f64 = 1e-10;

pub type Embedding = [f64; EMBEDDING_DIM];

#[derive(Debug, Clone)]
pub struct RailNetwork {
    stations: Vec<String>,
    index: HashMap<String, usize>,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Matrix,
    lines: BTreeMap<String, Vec<usize>>,
    station_embedding: Option<Vec<Embedding>>,
    line_embedding: BTreeMap<String, Embedding>,
}

impl RailNetwork {
    /// Builds the graph. Embeddings stay unset until [`RailNetwork::spectral_embedding`] runs.
    pub fn build<S: AsRef<str>>(stations: &[S], edges: &[(S, S)], lines: &[(S, Vec<S>)]) -> Result<Self> {
        if stations.is_empty() {
            return Err(Error::Network("empty station list".into()));
        }
        let mut index = HashMap::with_capacity(stations.len());
        for (i, s) in stations.iter().enumerate() {
            if index.insert(s.as_ref().to_string(), i).is_some() {
                return Err(Error::Network(format!("duplicate station `{}`", s.as_ref())));
            }
        }
        let lookup = |s: &S, ctx: &str| -> Result<usize> {
            index
                .get(s.as_ref())
                .copied()
                .ok_or_else(|| Error::Network(format!("{ctx} references undeclared station `{}`", s.as_ref())))
        };

        let n = stations.len();
        let mut adjacency = Matrix::zeros(n);
        let mut edge_set = BTreeSet::new();
        for (a, b) in edges {
            let i = lookup(a, "edge")?;
            let j = lookup(b, "edge")?;
            if i == j {
                return Err(Error::Network(format!("self-loop at `{}`", a.as_ref())));
            }
            edge_set.insert((i.min(j), i.max(j)));
            adjacency.set(i, j, 1.0);
            adjacency.set(j, i, 1.0);
        }

        let mut line_map = BTreeMap::new();
        for (id, members) in lines {
            let members = members
                .iter()
                .map(|s| lookup(s, &format!("line `{}`", id.as_ref())))
                .collect::<Result<Vec<_>>>()?;
            line_map.insert(id.as_ref().to_string(), members);
        }

        Ok(RailNetwork {
            stations: stations.iter().map(|s| s.as_ref().to_string()).collect(),
            index,
            edges: edge_set,
            adjacency,
            lines: line_map,
            station_embedding: None,
            line_embedding: BTreeMap::new(),
        })
    }

    pub fn stations(&self) -> &[String] {
        &self.stations
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn station_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges
            .iter()
            .map(|&(i, j)| (self.stations[i].as_str(), self.stations[j].as_str()))
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn lines(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.lines
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.adjacency.row(i).iter().sum()
    }

    /// Number of connected components (isolated nodes count as components).
    pub fn component_count(&self) -> usize {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut count = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(u) = stack.pop() {
                for v in 0..n {
                    if self.adjacency.get(u, v) != 0.0 && !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        count
    }

    /// `I - D^{-1/2} A D^{-1/2}`; isolated nodes keep their identity row.
    pub fn normalized_laplacian(&self) -> Matrix {
        let n = self.len();
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|i| {
                let d = self.degree(i);
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let mut l = Matrix::identity(n);
        for i in 0..n {
            for j in 0..n {
                let a = self.adjacency.get(i, j);
                if a != 0.0 {
                    l.set(i, j, l.get(i, j) - a * inv_sqrt[i] * inv_sqrt[j]);
                }
            }
        }
        l
    }

    /// Computes station coordinates from the `k` lowest non-trivial Laplacian eigenvectors,
    /// zero-padded to [`EMBEDDING_DIM`] and row-normalized, then refreshes line embeddings.
    pub fn spectral_embedding(&mut self, k: usize) -> Result<()> {
        let n = self.len();
        if n < 2 {
            return Err(Error::Network("spectral embedding needs at least 2 stations".into()));
        }
        if k > EMBEDDING_DIM {
            return Err(Error::Invalid(format!(
                "embedding dimension {k} exceeds {EMBEDDING_DIM}"
            )));
        }
        let vectors = self.nontrivial_eigenvectors(k)?;

        let mut rows = vec![[0.0; EMBEDDING_DIM]; n];
        for (col, v) in vectors.iter().enumerate() {
            for (row, x) in rows.iter_mut().zip(v) {
                row[col] = *x;
            }
        }
        for row in rows.iter_mut() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > NULL_ROW_NORM {
                row.iter_mut().for_each(|x| *x /= norm);
            } else {
                *row = [0.0; EMBEDDING_DIM];
            }
        }
        self.station_embedding = Some(rows);

        self.line_embedding.clear();
        let ids: Vec<String> = self.lines.keys().cloned().collect();
        for id in ids {
            if let Ok(e) = self.line_embedding(&id) {
                self.line_embedding.insert(id, e);
            }
        }
        Ok(())
    }

    /// Retained eigenvectors (sign-fixed, before row normalization) paired with eigenvalues.
    pub fn nontrivial_eigenpairs(&self, k: usize) -> Result<Vec<(f64, Vec<f64>)>> {
        let eig = jacobi_eigen(&self.normalized_laplacian(), JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS)?;
        let components = self.component_count();
        let mut skipped = 0;
        let mut out = Vec::with_capacity(k);
        for (idx, &lambda) in eig.values.iter().enumerate() {
            if skipped < components && lambda < TRIVIAL_EIGENVALUE {
                skipped += 1;
                continue;
            }
            if out.len() == k {
                break;
            }
            let mut v = eig.vector(idx);
            fix_sign(&mut v);
            out.push((lambda, v));
        }
        Ok(out)
    }

    fn nontrivial_eigenvectors(&self, k: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self.nontrivial_eigenpairs(k)?.into_iter().map(|(_, v)| v).collect())
    }

    pub fn has_embedding(&self) -> bool {
        self.station_embedding.is_some()
    }

    pub fn station_embedding(&self, i: usize) -> Option<&Embedding> {
        self.station_embedding.as_ref().and_then(|rows| rows.get(i))
    }

    pub fn embedding_of(&self, id: &str) -> Option<&Embedding> {
        self.station_index(id).and_then(|i| self.station_embedding(i))
    }

    /// Mean of the member stations' embedding rows.
    pub fn line_embedding(&self, line: &str) -> Result<Embedding> {
        let members = self
            .lines
            .get(line)
            .ok_or_else(|| Error::UnknownLine(line.to_string()))?;
        self.mean_embedding(members)
            .ok_or_else(|| Error::Invalid(format!("line `{line}` has no stations")))
    }

    /// Precomputed line embedding; `None` before embedding or for unknown lines.
    pub fn cached_line_embedding(&self, line: &str) -> Option<&Embedding> {
        self.line_embedding.get(line)
    }

    pub fn mean_embedding(&self, members: &[usize]) -> Option<Embedding> {
        let rows = self.station_embedding.as_ref()?;
        if members.is_empty() {
            return None;
        }
        let mut acc = [0.0; EMBEDDING_DIM];
        for &m in members {
            for (a, x) in acc.iter_mut().zip(&rows[m]) {
                *a += x;
            }
        }
        let n = members.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Some(acc)
    }

    /// First declared line containing every station in `stations`.
    pub fn line_covering(&self, stations: &[usize]) -> Option<&str> {
        self.lines
            .iter()
            .find(|(_, members)| stations.iter().all(|s| members.contains(s)))
            .map(|(id, _)| id.as_str())
    }

    pub fn parse(text: &str) -> Result<Self> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Stations,
            Edges,
            Lines,
        }
        let mut section = Section::None;
        let mut stations = Vec::new();
        let mut edges = Vec::new();
        let mut lines = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Network(format!("line {}: {msg}", lineno + 1));
            match line {
                "[stations]" => section = Section::Stations,
                "[edges]" => section = Section::Edges,
                "[lines]" => section = Section::Lines,
                _ => match section {
                    Section::None => return Err(bad("content outside of a section")),
                    Section::Stations => stations.push(line.to_string()),
                    Section::Edges => {
                        let (a, b) = line.split_once(',').ok_or_else(|| bad("expected `a,b`"))?;
                        edges.push((a.trim().to_string(), b.trim().to_string()));
                    }
                    Section::Lines => {
                        let (id, rest) = line.split_once(':').ok_or_else(|| bad("expected `id: a,b,...`"))?;
                        let members: Vec<String> = rest
                            .split(',')
                            .map(|s| s.trim().to_string())
                            .filter(|s| !s.is_empty())
                            .collect();
                        lines.push((id.trim().to_string(), members));
                    }
                },
            }
        }
        Self::build(&stations, &edges, &lines)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("[stations]\n");
        for s in &self.stations {
            out.push_str(s);
            out.push('\n');
        }
        out.push_str("[edges]\n");
        for (a, b) in self.edges() {
            let _ = writeln!(out, "{a},{b}");
        }
        out.push_str("[lines]\n");
        for (id, members) in &self.lines {
            let names: Vec<&str> = members.iter().map(|&m| self.stations[m].as_str()).collect();
            let _ = writeln!(out, "{id}: {}", names.join(","));
        }
        out
    }
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(stations: &[&str], edges: &[(&str, &str)]) -> RailNetwork {
        RailNetwork::build(stations, edges, &[]).unwrap()
    }

    #[test]
    fn single_edge_adjacency_and_laplacian() {
        let n = net(&["A", "B"], &[("A", "B")]);
        assert_eq!(n.adjacency().row(0), &[0.0, 1.0]);
        assert_eq!(n.adjacency().row(1), &[1.0, 0.0]);
        let l = n.normalized_laplacian();
        assert_eq!(l, Matrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]));
    }

    #[test]
    fn triangle_is_symmetric_with_degree_two() {
        let n = net(&["A", "B", "C"], &[("A", "B"), ("B", "C"), ("C", "A")]);
        assert!(n.adjacency().is_symmetric(0.0));
        for i in 0..3 {
            assert_eq!(n.degree(i), 2.0);
            assert_eq!(n.adjacency().get(i, i), 0.0);
        }
        let l = n.normalized_laplacian();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { -0.5 };
                assert!((l.get(i, j) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn build_errors() {
        let dangling = RailNetwork::build(&["A"], &[("A", "Z")], &[]);
        assert!(matches!(dangling, Err(Error::Network(m)) if m.contains("`Z`")));
        assert!(RailNetwork::build(&["A", "A"], &[], &[]).is_err());
        assert!(RailNetwork::build::<&str>(&[], &[], &[]).is_err());
        assert!(RailNetwork::build(&["A"], &[], &[("L", vec!["A", "Q"])]).is_err());
    }

    #[test]
    fn isolated_node_keeps_identity_row() {
        let n = net(&["A", "B", "C"], &[("A", "B")]);
        let l = n.normalized_laplacian();
        assert_eq!(l.row(2), &[0.0, 0.0, 1.0]);
        assert_eq!(n.component_count(), 2);
    }

    #[test]
    fn small_graph_is_zero_padded() {
        let names = ["A", "B", "C", "D", "E"];
        let edges: Vec<_> = names.windows(2).map(|w| (w[0], w[1])).collect();
        let mut n = net(&names, &edges);
        n.spectral_embedding(8).unwrap();
        for i in 0..5 {
            let row = n.station_embedding(i).unwrap();
            assert!(row[4..].iter().all(|&x| x == 0.0));
            let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn path_graph_fiedler_direction() {
        // P3 Laplacian eigenvalues {0, 1, 2}; the Fiedler vector is (1, 0, -1)/sqrt(2).
        let mut n = net(&["A", "B", "C"], &[("A", "B"), ("B", "C")]);
        let pairs = n.nontrivial_eigenpairs(1).unwrap();
        let (lambda, v) = &pairs[0];
        assert!((lambda - 1.0).abs() < 1e-12);
        let lv = n.normalized_laplacian().mul_vec(v);
        let residual = lv
            .iter()
            .zip(v)
            .map(|(a, b)| (a - lambda * b).abs())
            .fold(0.0, f64::max);
        assert!(residual < 1e-8);
        n.spectral_embedding(1).unwrap();
        assert!((n.station_embedding(0).unwrap()[0] - 1.0).abs() < 1e-12);
        assert_eq!(n.station_embedding(1).unwrap()[0], 0.0);
        assert!((n.station_embedding(2).unwrap()[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn line_embeddings_are_member_means() {
        let mut n = RailNetwork::build(
            &["A", "B", "C", "D"],
            &[("A", "B"), ("B", "C"), ("C", "D"), ("D", "A")],
            &[
                ("one", vec!["B"]),
                ("two", vec!["A", "C"]),
                ("all", vec!["A", "B", "C", "D"]),
            ],
        )
        .unwrap();
        assert!(n.line_embedding("one").is_err(), "needs embedding first");
        n.spectral_embedding(8).unwrap();
        assert_eq!(&n.line_embedding("one").unwrap(), n.station_embedding(1).unwrap());
        let (u, v) = (n.station_embedding(0).unwrap(), n.station_embedding(2).unwrap());
        let two = n.line_embedding("two").unwrap();
        for d in 0..EMBEDDING_DIM {
            assert_eq!(two[d], (u[d] + v[d]) / 2.0);
        }
        // brute-force column means
        let all = n.line_embedding("all").unwrap();
        for d in 0..EMBEDDING_DIM {
            let mut s = 0.0;
            for i in 0..4 {
                s += n.station_embedding(i).unwrap()[d];
            }
            assert!((all[d] - s / 4.0).abs() < 1e-15);
        }
        assert_eq!(n.cached_line_embedding("two"), Some(&two));
        assert!(matches!(n.line_embedding("nope"), Err(Error::UnknownLine(_))));
    }

    #[test]
    fn empty_line_is_rejected() {
        let mut n = RailNetwork::build(&["A", "B"], &[("A", "B")], &[("L", vec![])]).unwrap();
        n.spectral_embedding(8).unwrap();
        assert!(matches!(n.line_embedding("L"), Err(Error::Invalid(_))));
        assert!(n.cached_line_embedding("L").is_none());
    }

    #[test]
    fn text_round_trip() {
        let text = "[stations]\nA\nB\nC\n[edges]\nA,B\nB,C\n[lines]\nL1: A,B,C\n";
        let n = RailNetwork::parse(text).unwrap();
        assert_eq!(n.len(), 3);
        assert_eq!(n.lines()["L1"], vec![0, 1, 2]);
        assert_eq!(n.to_text(), text);
        assert!(RailNetwork::parse("A\n").is_err());
    }
}
