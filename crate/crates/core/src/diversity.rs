//! Task-set diversity: keyword attributes, a weighted attribute distance,
//! a 2-D SMACOF embedding, k-means clustering and convex-hull spans.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DiversityError {
    #[error("need at least two tasks, got {0}")]
    TooFewTasks(usize),
    #[error("all pairwise distances are zero")]
    DegenerateMatrix,
    #[error("invalid distance matrix: {0}")]
    InvalidMatrix(String),
    #[error("k must be in 1..={n}, got {k}")]
    BadK { k: usize, n: usize },
}

/// Factor weights, highest first: action, location shape, object shape,
/// object color, target color. The vote counts from the survey that ranked
/// the factors are kept beside them.
pub const WEIGHTS: [f64; 5] = [5.0, 4.0, 3.0, 2.0, 1.0];
pub const VOTES: [u32; 5] = [166, 112, 130, 53, 39];
pub const MAX_DISTANCE: f64 = 15.0;

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskAttributes {
    pub action: Option<String>,
    pub object_shape: Option<String>,
    pub location_shape: Option<String>,
    pub object_color: Option<String>,
    pub target_color: Option<String>,
}

impl TaskAttributes {
    fn factors(&self) -> [&Option<String>; 5] {
        [
            &self.action,
            &self.location_shape,
            &self.object_shape,
            &self.object_color,
            &self.target_color,
        ]
    }
}

/// Keyword lists. Multi-word entries win over their prefixes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub actions: Vec<String>,
    pub colors: Vec<String>,
    pub shapes: Vec<String>,
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for Lexicon {
    fn default() -> Self {
        Self {
            actions: strings(&[
                "move", "push", "pick", "place", "put", "stack", "open", "close", "press", "gather",
                "align", "arrange", "swap", "launch", "sort", "shoot", "trigger", "raise", "balance",
                "lift", "pull", "turn", "rotate", "drop",
            ]),
            colors: strings(&[
                "red", "green", "blue", "yellow", "orange", "purple", "black", "white", "pink",
                "brown", "gray", "grey",
            ]),
            shapes: strings(&[
                "block", "bowl", "bin", "drawer", "stick", "plate", "line", "triangle", "square",
                "circle", "corner", "catapult", "catapult arm", "catapult button", "button",
                "airplane toy", "turbo airplane toy", "horse toy", "bus toy", "toy", "package",
                "mailbox", "flag", "bottle", "vitamin bottle", "pencil case", "crayon box",
                "box", "cup", "mug", "microwave", "door", "shelf", "tray", "basket", "ball",
            ]),
        }
    }
}

fn tokenize(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric() && c != '-')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Singular candidates for a token ("boxes" → "box", "blocks" → "block").
fn singulars(t: &str) -> Vec<&str> {
    let mut v = vec![t];
    if let Some(s) = t.strip_suffix("es") {
        v.push(s);
    }
    if let Some(s) = t.strip_suffix('s') {
        v.push(s);
    }
    v
}

/// Length in tokens of the longest entry matching at `tokens[i..]`.
fn longest_match(tokens: &[String], i: usize, entries: &[Vec<String>]) -> Option<(usize, String)> {
    let mut best: Option<(usize, String)> = None;
    for e in entries {
        let n = e.len();
        if i + n > tokens.len() || best.as_ref().is_some_and(|(b, _)| *b >= n) {
            continue;
        }
        let head_ok = e[..n - 1].iter().zip(&tokens[i..]).all(|(a, b)| a == b);
        let last_ok = singulars(&tokens[i + n - 1]).contains(&e[n - 1].as_str());
        if head_ok && last_ok {
            best = Some((n, e.join(" ")));
        }
    }
    best
}

/// Keyword extraction. The first action word is the action; the first and
/// second shape phrases are the object and the target, each taking the
/// color word immediately before it.
pub fn extract_attributes(description: &str, lexicon: &Lexicon) -> TaskAttributes {
    let tokens = tokenize(description);
    let shapes: Vec<Vec<String>> = lexicon.shapes.iter().map(|s| tokenize(s)).collect();
    let mut out = TaskAttributes::default();
    let mut phrases: Vec<(String, Option<String>)> = Vec::new();
    let mut color: Option<String> = None;
    let mut i = 0;
    while i < tokens.len() {
        let t = &tokens[i];
        if out.action.is_none() {
            if let Some(a) = lexicon.actions.iter().find(|a| singulars(t).contains(&a.as_str())) {
                out.action = Some(a.clone());
                i += 1;
                continue;
            }
        }
        if lexicon.colors.contains(t) {
            color = Some(t.clone());
            i += 1;
            continue;
        }
        if let Some((n, shape)) = longest_match(&tokens, i, &shapes) {
            phrases.push((shape, color.take()));
            i += n;
            continue;
        }
        // Articles keep a pending color attached ("the red, the ...").
        if !matches!(t.as_str(), "the" | "a" | "an") {
            color = None;
        }
        i += 1;
    }
    let mut it = phrases.into_iter();
    if let Some((s, c)) = it.next() {
        out.object_shape = Some(s);
        out.object_color = c;
    }
    if let Some((s, c)) = it.next() {
        out.location_shape = Some(s);
        out.target_color = c;
    }
    out
}

/// Weighted count of differing factors. Two absent values agree; one
/// absent and one present differ.
pub fn task_distance(a: &TaskAttributes, b: &TaskAttributes) -> f64 {
    a.factors()
        .iter()
        .zip(b.factors())
        .zip(WEIGHTS)
        .map(|((x, y), w)| if *x != y { w } else { 0.0 })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    /// Validates symmetry, a zero diagonal and finite non-negative entries.
    #[allow(clippy::needless_range_loop)]
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DiversityError> {
        let n = rows.len();
        let bad = |m: String| Err(DiversityError::InvalidMatrix(m));
        if rows.iter().any(|r| r.len() != n) {
            return bad("matrix is not square".into());
        }
        for i in 0..n {
            if rows[i][i] != 0.0 {
                return bad(format!("diagonal entry {i} is {}", rows[i][i]));
            }
            for j in 0..n {
                let v = rows[i][j];
                if !v.is_finite() || v < 0.0 {
                    return bad(format!("entry ({i}, {j}) is {v}"));
                }
                if v != rows[j][i] {
                    return bad(format!("entries ({i}, {j}) and ({j}, {i}) differ"));
                }
            }
        }
        Ok(Self {
            n,
            entries: rows.concat(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }
}

pub fn distance_matrix(tasks: &[TaskAttributes]) -> Result<DistanceMatrix, DiversityError> {
    let n = tasks.len();
    if n < 2 {
        return Err(DiversityError::TooFewTasks(n));
    }
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = task_distance(&tasks[i], &tasks[j]);
            entries[i * n + j] = d;
            entries[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, entries })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    pub points: Vec<[f64; 2]>,
    pub stress: f64,
    /// Raw stress of the initial configuration and after each iteration.
    pub stress_history: Vec<f64>,
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Σ_{i<j} (d_ij − ‖x_i − x_j‖)².
pub fn raw_stress(d: &DistanceMatrix, x: &[[f64; 2]]) -> f64 {
    let mut s = 0.0;
    for i in 0..d.n {
        for j in i + 1..d.n {
            s += (d.get(i, j) - dist2(&x[i], &x[j])).powi(2);
        }
    }
    s
}

/// Classical (Torgerson) scaling: top two eigenpairs of the double-centred
/// squared distances.
pub fn classical_mds(d: &DistanceMatrix) -> Vec<[f64; 2]> {
    let n = d.n;
    let sq = DMatrix::from_fn(n, n, |i, j| d.get(i, j).powi(2));
    let row_mean: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let total = row_mean.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_mean[i] - row_mean[j] + total));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&c)));
    let mut pts = vec![[0.0; 2]; n];
    for (axis, &k) in order.iter().take(2).enumerate() {
        let scale = eig.eigenvalues[k].max(0.0).sqrt();
        let v = eig.eigenvectors.column(k);
        // Fix the eigenvector sign so the embedding is reproducible.
        let sign = match v.iter().find(|c| c.abs() > 1e-12) {
            Some(c) if *c < 0.0 => -1.0,
            _ => 1.0,
        };
        for i in 0..n {
            pts[i][axis] = sign * scale * v[i];
        }
    }
    pts
}

/// One Guttman transform with unit weights: X ← B(X)·X / n.
fn guttman(d: &DistanceMatrix, x: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = d.n;
    let mut out = vec![[0.0; 2]; n];
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let r = dist2(&x[i], &x[j]);
            let bij = if r > 0.0 { -d.get(i, j) / r } else { 0.0 };
            diag -= bij;
            out[i][0] += bij * x[j][0];
            out[i][1] += bij * x[j][1];
        }
        out[i][0] += diag * x[i][0];
        out[i][1] += diag * x[i][1];
    }
    for p in &mut out {
        p[0] /= n as f64;
        p[1] /= n as f64;
    }
    out
}

/// SMACOF from the classical solution. Stops when the relative decrease in
/// raw stress drops below `tol`, the stress is numerically zero, or after
/// `max_iters` transforms.
pub fn mds_embed(d: &DistanceMatrix, max_iters: usize, tol: f64) -> Result<Embedding2D, DiversityError> {
    if d.n < 2 {
        return Err(DiversityError::TooFewTasks(d.n));
    }
    if d.entries.iter().all(|v| *v == 0.0) {
        return Err(DiversityError::DegenerateMatrix);
    }
    let scale: f64 = d.entries.iter().map(|v| v * v).sum::<f64>() / 2.0;
    let mut x = classical_mds(d);
    let mut stress = raw_stress(d, &x);
    let mut history = vec![stress];
    for _ in 0..max_iters {
        if stress <= 1e-24 * scale {
            break;
        }
        let next = guttman(d, &x);
        let s = raw_stress(d, &next);
        // Majorization guarantees s ≤ stress in exact arithmetic; a rise can
        // only be rounding at the fixed point, so the step is dropped.
        if s > stress {
            break;
        }
        let rel = (stress - s) / stress;
        x = next;
        stress = s;
        history.push(s);
        if rel < tol {
            break;
        }
    }
    Ok(Embedding2D {
        points: x,
        stress,
        stress_history: history,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Vec<[f64; 2]>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

fn sq(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: &[f64; 2], centroids: &[[f64; 2]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, q) in centroids.iter().enumerate() {
        let d = sq(p, q);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(points: &[[f64; 2]], k: usize, rng: &mut impl Rng) -> Vec<[f64; 2]> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    while centroids.len() < k {
        let w: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            // Fewer distinct points than k; duplicates are fine.
            centroids.push(points[rng.random_range(0..points.len())]);
            continue;
        }
        let mut r = rng.random_range(0.0..total);
        let mut pick = points.len() - 1;
        for (i, wi) in w.iter().enumerate() {
            if r < *wi {
                pick = i;
                break;
            }
            r -= wi;
        }
        centroids.push(points[pick]);
    }
    centroids
}

/// k-means++ seeding followed by Lloyd iterations. An empty cluster is
/// re-seeded at the point farthest from its current centroid.
pub fn kmeans(points: &[[f64; 2]], k: usize, seed: u64, max_iters: usize) -> Result<Clustering, DiversityError> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(DiversityError::BadK { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            inertia += d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; 3]; k];
        for (p, &c) in points.iter().zip(&assignments) {
            sums[c][0] += p[0];
            sums[c][1] += p[1];
            sums[c][2] += 1.0;
        }
        for c in 0..k {
            if sums[c][2] > 0.0 {
                centroids[c] = [sums[c][0] / sums[c][2], sums[c][1] / sums[c][2]];
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq(&points[a], &centroids[assignments[a]]);
                        let db = sq(&points[b], &centroids[assignments[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap();
                centroids[c] = points[far];
                assignments[far] = c;
            }
        }
    }
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &c)| sq(p, &centroids[c]))
        .sum();
    Ok(Clustering {
        assignments,
        centroids,
        inertia,
        inertia_history: history,
    })
}

fn cross(o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull in counter-clockwise order (monotone chain, collinear points
/// dropped).
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p: Vec<[f64; 2]> = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(p.iter())
        } else {
            Box::new(p.iter().rev())
        };
        for q in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(*q);
        }
        hull.pop();
    }
    hull
}

/// Shoelace area of the convex hull; zero for fewer than three
/// non-collinear points.
pub fn hull_area(points: &[[f64; 2]]) -> f64 {
    let h = convex_hull(points);
    if h.len() < 3 {
        return 0.0;
    }
    let mut a = 0.0;
    for i in 0..h.len() {
        let (p, q) = (&h[i], &h[(i + 1) % h.len()]);
        a += p[0] * q[1] - q[0] * p[1];
    }
    a.abs() / 2.0
}

const TASK_LISTS: [(&str, &str); 4] = [
    ("bbsea_10", include_str!("../assets/tasks/bbsea_10.txt")),
    ("bbsea_30", include_str!("../assets/tasks/bbsea_30.txt")),
    ("bbsea_60", include_str!("../assets/tasks/bbsea_60.txt")),
    ("prior_work", include_str!("../assets/tasks/prior_work.txt")),
];

/// One task per non-blank line.
pub fn parse_task_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn task_list_names() -> Vec<&'static str> {
    TASK_LISTS.iter().map(|(n, _)| *n).collect()
}

pub fn bundled_task_list(name: &str) -> Option<Vec<String>> {
    TASK_LISTS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_task_list(text))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSpan {
    pub group: String,
    pub tasks: usize,
    pub hull_area: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    /// (group, task description) in embedding order.
    pub tasks: Vec<(String, String)>,
    pub attributes: Vec<TaskAttributes>,
    pub distances: DistanceMatrix,
    pub embedding: Embedding2D,
    pub clustering: Clustering,
    pub cluster_areas: Vec<f64>,
    pub groups: Vec<GroupSpan>,
}

/// Embeds every group's tasks jointly, clusters the embedding and reports
/// the hull area each group and each cluster spans.
pub fn analyze(
    groups: &[(String, Vec<String>)],
    lexicon: &Lexicon,
    k: usize,
    seed: u64,
) -> Result<DiversityReport, DiversityError> {
    let tasks: Vec<(String, String)> = groups
        .iter()
        .flat_map(|(g, ts)| ts.iter().map(move |t| (g.clone(), t.clone())))
        .collect();
    let attributes: Vec<TaskAttributes> = tasks
        .iter()
        .map(|(_, t)| extract_attributes(t, lexicon))
        .collect();
    let distances = distance_matrix(&attributes)?;
    let embedding = mds_embed(&distances, 300, 1e-9)?;
    let clustering = kmeans(&embedding.points, k.min(tasks.len()), seed, 300)?;
    let cluster_areas = (0..clustering.centroids.len())
        .map(|c| {
            let pts: Vec<[f64; 2]> = embedding
                .points
                .iter()
                .zip(&clustering.assignments)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| *p)
                .collect();
            hull_area(&pts)
        })
        .collect();
    let spans = groups
        .iter()
        .map(|(g, _)| {
            let pts: Vec<[f64; 2]> = tasks
                .iter()
                .zip(&embedding.points)
                .filter(|((tg, _), _)| tg == g)
                .map(|(_, p)| *p)
                .collect();
            GroupSpan {
                group: g.clone(),
                tasks: pts.len(),
                hull_area: hull_area(&pts),
            }
        })
        .collect();
    Ok(DiversityReport {
        tasks,
        attributes,
        distances,
        embedding,
        clustering,
        cluster_areas,
        groups: spans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn attrs(a: [Option<&str>; 5]) -> TaskAttributes {
        let s = |o: Option<&str>| o.map(str::to_string);
        TaskAttributes {
            action: s(a[0]),
            object_shape: s(a[1]),
            location_shape: s(a[2]),
            object_color: s(a[3]),
            target_color: s(a[4]),
        }
    }

    #[test]
    fn votes_rank_weights() {
        assert_eq!(VOTES.iter().sum::<u32>(), 500);
        assert_eq!(WEIGHTS.iter().sum::<f64>(), MAX_DISTANCE);
    }

    #[test]
    fn extraction_examples() {
        let lx = Lexicon::default();
        assert_eq!(
            extract_attributes("push the red block towards the drawer", &lx),
            attrs([Some("push"), Some("block"), Some("drawer"), Some("red"), None])
        );
        assert_eq!(
            extract_attributes("open the drawer", &lx),
            attrs([Some("open"), Some("drawer"), None, None, None])
        );
        assert_eq!(extract_attributes("", &lx), TaskAttributes::default());
        assert_eq!(
            extract_attributes("move the green block into the bowl", &lx),
            attrs([Some("move"), Some("block"), Some("bowl"), Some("green"), None])
        );
        assert_eq!(
            extract_attributes("Move the turbo airplane toy into the green bin", &lx),
            attrs([Some("move"), Some("turbo airplane toy"), Some("bin"), None, Some("green")])
        );
        assert_eq!(
            extract_attributes("stack all the blocks", &lx),
            attrs([Some("stack"), Some("block"), None, None, None])
        );
    }

    #[test]
    fn distance_examples() {
        let a = attrs([Some("push"), Some("block"), Some("drawer"), Some("red"), None]);
        assert_eq!(task_distance(&a, &a), 0.0);
        let mut b = a.clone();
        b.action = Some("move".into());
        assert_eq!(task_distance(&a, &b), 5.0);
        let c = attrs([Some("open"), Some("bowl"), Some("bin"), Some("blue"), Some("green")]);
        assert_eq!(task_distance(&a, &c), 15.0);
        let mut d = a.clone();
        d.object_color = None;
        assert_eq!(task_distance(&a, &d), 2.0);
    }

    #[test]
    fn matrix_matches_pairwise_calls() {
        let lx = Lexicon::default();
        let t: Vec<_> = ["open the drawer", "push the red block towards the drawer", "move the stick into the green bin"]
            .iter()
            .map(|s| extract_attributes(s, &lx))
            .collect();
        let m = distance_matrix(&t).unwrap();
        for i in 0..3 {
            assert_eq!(m.get(i, i), 0.0);
            for j in 0..3 {
                assert_eq!(m.get(i, j), task_distance(&t[i], &t[j]));
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
        assert_eq!(distance_matrix(&t[..1]), Err(DiversityError::TooFewTasks(1)));
    }

    fn reconstruct_ok(d: &DistanceMatrix, e: &Embedding2D, tol: f64) {
        for i in 0..d.n() {
            for j in 0..d.n() {
                let r = dist2(&e.points[i], &e.points[j]);
                assert!((r - d.get(i, j)).abs() < tol, "({i},{j}) {r} vs {}", d.get(i, j));
            }
        }
    }

    #[test]
    fn exact_embeddings() {
        let tri = DistanceMatrix::from_rows(&[vec![0.0, 3.0, 4.0], vec![3.0, 0.0, 5.0], vec![4.0, 5.0, 0.0]]).unwrap();
        let e = mds_embed(&tri, 300, 1e-12).unwrap();
        assert!(e.stress < 1e-9);
        reconstruct_ok(&tri, &e, 1e-6);
        let r2 = 2f64.sqrt();
        let sq = DistanceMatrix::from_rows(&[
            vec![0.0, 1.0, r2, 1.0],
            vec![1.0, 0.0, 1.0, r2],
            vec![r2, 1.0, 0.0, 1.0],
            vec![1.0, r2, 1.0, 0.0],
        ])
        .unwrap();
        let e = mds_embed(&sq, 300, 1e-12).unwrap();
        assert!(e.stress < 1e-9);
        reconstruct_ok(&sq, &e, 1e-6);
        let two = DistanceMatrix::from_rows(&[vec![0.0, 7.5], vec![7.5, 0.0]]).unwrap();
        let e = mds_embed(&two, 300, 1e-12).unwrap();
        assert!((dist2(&e.points[0], &e.points[1]) - 7.5).abs() < 1e-9);
    }

    #[test]
    fn degenerate_and_invalid() {
        let z = DistanceMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(mds_embed(&z, 10, 1e-9), Err(DiversityError::DegenerateMatrix));
        assert!(DistanceMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).is_err());
        assert!(DistanceMatrix::from_rows(&[vec![1.0]]).is_err());
    }

    #[test]
    fn kmeans_cases() {
        let pts = [[0.0, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0]];
        let c = kmeans(&pts, 2, 5, 100).unwrap();
        assert_eq!(c.assignments[0], c.assignments[1]);
        assert_eq!(c.assignments[2], c.assignments[3]);
        assert_ne!(c.assignments[0], c.assignments[2]);
        let c = kmeans(&pts, 4, 5, 100).unwrap();
        assert!(c.inertia.abs() < 1e-12);
        let c = kmeans(&pts, 1, 5, 100).unwrap();
        assert!((c.centroids[0][0] - 5.05).abs() < 1e-12 && (c.centroids[0][1] - 5.0).abs() < 1e-12);
        assert_eq!(kmeans(&pts, 0, 0, 10), Err(DiversityError::BadK { k: 0, n: 4 }));
        assert_eq!(kmeans(&pts, 5, 0, 10), Err(DiversityError::BadK { k: 5, n: 4 }));
    }

    #[test]
    fn hull_cases() {
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        assert!((hull_area(&sq) - 1.0).abs() < 1e-12);
        assert_eq!(hull_area(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]), 0.0);
        assert_eq!(hull_area(&[[0.0, 0.0]]), 0.0);
    }

    #[test]
    fn analyze_bundled_lists() {
        let groups = vec![
            ("bbsea".to_string(), bundled_task_list("bbsea_60").unwrap()),
            ("prior".to_string(), bundled_task_list("prior_work").unwrap()),
        ];
        assert_eq!(bundled_task_list("bbsea_10").unwrap().len(), 10);
        assert!(bundled_task_list("nope").is_none());
        let r = analyze(&groups, &Lexicon::default(), 5, 0).unwrap();
        assert_eq!(r.embedding.points.len(), 78);
        assert!(r.groups[0].hull_area > r.groups[1].hull_area);
    }

    fn arb_attr() -> impl Strategy<Value = TaskAttributes> {
        let tok = |v: &'static [&'static str]| prop::option::of(prop::sample::select(v).prop_map(str::to_string));
        (
            tok(&["move", "push", "open"]),
            tok(&["block", "bowl"]),
            tok(&["bin", "drawer", "plate"]),
            tok(&["red", "green"]),
            tok(&["blue", "red"]),
        )
            .prop_map(|(a, o, l, oc, tc)| TaskAttributes {
                action: a,
                object_shape: o,
                location_shape: l,
                object_color: oc,
                target_color: tc,
            })
    }

    fn arb_matrix() -> impl Strategy<Value = DistanceMatrix> {
        (3usize..9)
            .prop_flat_map(|n| prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), n))
            .prop_map(|pts| {
                let n = pts.len();
                let rows: Vec<Vec<f64>> = (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| {
                                (0..3).map(|k| (pts[i][k] - pts[j][k]).powi(2)).sum::<f64>().sqrt()
                            })
                            .collect()
                    })
                    .collect();
                let rows: Vec<Vec<f64>> = (0..n)
                    .map(|i| (0..n).map(|j| if i < j { rows[i][j] } else { rows[j][i] }).collect())
                    .collect();
                DistanceMatrix::from_rows(&rows).unwrap()
            })
    }

    proptest! {
        #[test]
        fn distance_is_pseudometric(a in arb_attr(), b in arb_attr(), c in arb_attr()) {
            prop_assert_eq!(task_distance(&a, &a), 0.0);
            prop_assert_eq!(task_distance(&a, &b), task_distance(&b, &a));
            prop_assert!(task_distance(&a, &c) <= task_distance(&a, &b) + task_distance(&b, &c));
            prop_assert!(task_distance(&a, &b) <= MAX_DISTANCE);
        }

        #[test]
        fn smacof_stress_never_rises(d in arb_matrix()) {
            let e = mds_embed(&d, 100, 0.0).unwrap();
            for w in e.stress_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].max(1e-12));
            }
            prop_assert!(e.stress.is_finite());
        }

        #[test]
        fn lloyd_inertia_never_rises(pts in prop::collection::vec([-5.0f64..5.0, -5.0f64..5.0], 2..30), k in 1usize..5, seed in 0u64..100) {
            prop_assume!(k <= pts.len());
            let c = kmeans(&pts, k, seed, 100).unwrap();
            for w in c.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
        }

        #[test]
        fn hull_covers_every_triangle(pts in prop::collection::vec([-1.0f64..1.0, -1.0f64..1.0], 3..10)) {
            let area = hull_area(&pts);
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    for k in j + 1..pts.len() {
                        let t = cross(&pts[i], &pts[j], &pts[k]).abs() / 2.0;
                        prop_assert!(area + 1e-12 >= t);
                    }
                }
            }
        }
    }
}
