//! Permutation symmetry tooling: an exact linear-assignment solver,
//! coordinate-ascent weight matching between two MLPs, permutation
//! application, and aligned parameter interpolation.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mlp::MlpModel;

/// One permutation per hidden layer: `perms[h][i]` is the source unit that
/// moves to position i.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationSet {
    perms: Vec<Vec<usize>>,
}

impl PermutationSet {
    pub fn new(perms: Vec<Vec<usize>>) -> Result<Self> {
        for (h, p) in perms.iter().enumerate() {
            let mut seen = vec![false; p.len()];
            for &v in p {
                if v >= p.len() || seen[v] {
                    return Err(Error::Usage(format!("perms[{h}] is not a bijection")));
                }
                seen[v] = true;
            }
        }
        Ok(PermutationSet { perms })
    }

    /// Identity permutations matching the model's hidden widths.
    pub fn identity_for(model: &MlpModel) -> Self {
        let sizes = model.layer_sizes();
        let perms = sizes[1..sizes.len() - 1]
            .iter()
            .map(|&w| (0..w).collect())
            .collect();
        PermutationSet { perms }
    }

    pub fn perms(&self) -> &[Vec<usize>] {
        &self.perms
    }

    pub fn is_identity(&self) -> bool {
        self.perms
            .iter()
            .all(|p| p.iter().enumerate().all(|(i, &v)| i == v))
    }

    /// The inverse set: applying both in sequence is a no-op.
    pub fn inverse(&self) -> Self {
        let perms = self
            .perms
            .iter()
            .map(|p| {
                let mut inv = vec![0usize; p.len()];
                for (i, &v) in p.iter().enumerate() {
                    inv[v] = i;
                }
                inv
            })
            .collect();
        PermutationSet { perms }
    }
}

/// Exact maximum-score assignment: returns p with `sum score[i][p[i]]`
/// maximal; among optima, the lexicographically smallest permutation.
pub fn solve_lap(score: &Matrix) -> Result<Vec<usize>> {
    if score.rows() != score.cols() {
        return Err(Error::Dimension(format!(
            "assignment needs a square matrix, got {}x{}",
            score.rows(),
            score.cols()
        )));
    }
    if !score.is_finite() {
        return Err(Error::InvalidValue("non-finite assignment score".into()));
    }
    let n = score.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    // Minimize the negated score with the Hungarian algorithm, then pick the
    // lexicographically smallest perfect matching over the tight edges of
    // the optimal dual, which are exactly the edges optimal assignments use.
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| score.row(i).iter().map(|&v| -v).collect())
        .collect();
    let (row_to_col, u, v) = hungarian_min(&cost);

    let scale = score
        .as_slice()
        .iter()
        .fold(0.0f64, |acc, &x| acc.max(x.abs()));
    let eps = 1e-9 * (1.0 + scale);
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| cost[i][j] - u[i] - v[j] <= eps)
                .collect()
        })
        .collect();

    Ok(lex_smallest_matching(&tight, row_to_col))
}

/// Shortest-augmenting-path Hungarian for square min-cost assignment.
/// Returns (row_to_col, u, v) with dual-feasible potentials: for all (i, j),
/// u[i] + v[j] <= cost[i][j], tight on matched edges.
fn hungarian_min(cost: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.len();
    // 1-indexed with a sentinel column 0.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut match_col = vec![0usize; n + 1]; // column -> row (0 = free)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        match_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = match_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[match_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if match_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            match_col[j0] = match_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[match_col[j] - 1] = j - 1;
    }
    (row_to_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Lexicographically smallest perfect matching within `tight`, starting from
/// a known perfect matching. Rows are fixed in order; a candidate column is
/// accepted iff the remaining rows can still be perfectly matched, checked
/// by augmenting-path rerouting.
fn lex_smallest_matching(tight: &[Vec<usize>], initial: Vec<usize>) -> Vec<usize> {
    let n = tight.len();
    let mut row_to_col = initial;
    let mut col_to_row = vec![0usize; n];
    for (r, &c) in row_to_col.iter().enumerate() {
        col_to_row[c] = r;
    }
    let mut fixed_col = vec![false; n];

    for i in 0..n {
        for &j in &tight[i] {
            if fixed_col[j] {
                continue;
            }
            if row_to_col[i] == j {
                break; // already there, nothing cheaper remains
            }
            // Tentatively give j to row i; its current holder must reroute.
            let holder = col_to_row[j];
            let freed = row_to_col[i];
            let mut trial_rtc = row_to_col.clone();
            let mut trial_ctr = col_to_row.clone();
            trial_rtc[i] = j;
            trial_ctr[j] = i;
            trial_rtc[holder] = usize::MAX;
            trial_ctr[freed] = usize::MAX;
            let mut visited = vec![false; n];
            visited[j] = true;
            if reroute(
                holder,
                tight,
                &fixed_col,
                i,
                &mut trial_rtc,
                &mut trial_ctr,
                &mut visited,
            ) {
                row_to_col = trial_rtc;
                col_to_row = trial_ctr;
                break;
            }
        }
        fixed_col[row_to_col[i]] = true;
    }
    row_to_col
}

/// Kuhn-style augmenting search: find `row` a column, stealing recursively
/// from rows other than `immovable`.
fn reroute(
    row: usize,
    tight: &[Vec<usize>],
    fixed_col: &[bool],
    immovable: usize,
    row_to_col: &mut [usize],
    col_to_row: &mut [usize],
    visited: &mut [bool],
) -> bool {
    for &j in &tight[row] {
        if fixed_col[j] || visited[j] {
            continue;
        }
        visited[j] = true;
        let holder = col_to_row[j];
        if holder == usize::MAX
            || (holder != immovable
                && reroute(holder, tight, fixed_col, immovable, row_to_col, col_to_row, visited))
        {
            row_to_col[row] = j;
            col_to_row[j] = row;
            return true;
        }
    }
    false
}

/// Dot product of all parameters of two same-architecture models.
pub fn alignment_dot(a: &MlpModel, b: &MlpModel) -> Result<f64> {
    if !a.same_architecture(b) {
        return Err(Error::Usage("alignment_dot across architectures".into()));
    }
    let mut acc = 0.0;
    for (wa, wb) in a.weights().iter().zip(b.weights()) {
        for (x, y) in wa.as_slice().iter().zip(wb.as_slice()) {
            acc += x * y;
        }
    }
    for (ba, bb) in a.biases().iter().zip(b.biases()) {
        for (x, y) in ba.iter().zip(bb) {
            acc += x * y;
        }
    }
    Ok(acc)
}

/// Coordinate-ascent weight matching: find hidden-layer permutations of
/// `candidate` maximizing its parameter dot product with `reference`.
/// Biases fold into the per-layer score as an extra weight column. Layers
/// update in seeded-random order until a full sweep changes nothing, with a
/// 100-sweep cap.
pub fn weight_matching(reference: &MlpModel, candidate: &MlpModel) -> Result<PermutationSet> {
    if !reference.same_architecture(candidate) {
        return Err(Error::Usage("weight matching across architectures".into()));
    }
    let layers = reference.num_layers();
    let hidden = layers - 1;
    let sizes = reference.layer_sizes();
    let mut perms: Vec<Vec<usize>> = sizes[1..layers].iter().map(|&w| (0..w).collect()).collect();
    if hidden == 0 {
        return PermutationSet::new(perms);
    }
    // Fixed internal stream: matching stays a pure function of its inputs.
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a1c_57ee_u64);

    for _sweep in 0..100 {
        let mut changed = false;
        let mut order: Vec<usize> = (0..hidden).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for &h in &order {
            let score = layer_score(reference, candidate, &perms, h)?;
            let new_perm = solve_lap(&score)?;
            if new_perm != perms[h] {
                perms[h] = new_perm;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    PermutationSet::new(perms)
}

/// LAP score for hidden layer h: S[i][c] is the alignment gained by mapping
/// candidate unit c to position i, given the neighbouring permutations.
fn layer_score(
    reference: &MlpModel,
    candidate: &MlpModel,
    perms: &[Vec<usize>],
    h: usize,
) -> Result<Matrix> {
    let wa = &reference.weights()[h];
    let wb = &candidate.weights()[h];
    let width = wa.rows();

    // Incoming term: W_a[i,:] . W_b[c, prev_perm(:)] plus the bias fold.
    let wb_cols_permuted = if h == 0 {
        wb.clone()
    } else {
        let prev = &perms[h - 1];
        let mut m = Matrix::zeros(wb.rows(), wb.cols());
        for r in 0..wb.rows() {
            for (j, &src) in prev.iter().enumerate() {
                m.set(r, j, wb.get(r, src));
            }
        }
        m
    };
    let mut score = wa.matmul_transpose(&wb_cols_permuted)?;
    let ba = &reference.biases()[h];
    let bb = &candidate.biases()[h];
    for i in 0..width {
        for c in 0..width {
            score.set(i, c, score.get(i, c) + ba[i] * bb[c]);
        }
    }

    // Outgoing term: column i of W_a[h+1] against column c of the
    // row-permuted W_b[h+1].
    let wa_next = &reference.weights()[h + 1];
    let wb_next = &candidate.weights()[h + 1];
    let hidden = perms.len();
    let wb_next_rows_permuted = if h + 1 < hidden {
        let next = &perms[h + 1];
        let mut m = Matrix::zeros(wb_next.rows(), wb_next.cols());
        for (r, &src) in next.iter().enumerate() {
            m.row_mut(r).copy_from_slice(wb_next.row(src));
        }
        m
    } else {
        wb_next.clone()
    };
    let outgoing = wa_next.transpose_matmul(&wb_next_rows_permuted)?;
    for i in 0..width {
        for c in 0..width {
            score.set(i, c, score.get(i, c) + outgoing.get(i, c));
        }
    }
    Ok(score)
}

/// Reorder hidden units by the given permutations. The returned model
/// computes the identical function.
pub fn apply_permutation(model: &MlpModel, perms: &PermutationSet) -> Result<MlpModel> {
    let sizes = model.layer_sizes();
    let hidden_widths = &sizes[1..sizes.len() - 1];
    if perms.perms.len() != hidden_widths.len()
        || perms
            .perms
            .iter()
            .zip(hidden_widths)
            .any(|(p, &w)| p.len() != w)
    {
        return Err(Error::Usage("permutation set does not match hidden layers".into()));
    }
    let mut out = model.clone();
    for (h, perm) in perms.perms.iter().enumerate() {
        // Rows of layer h and its bias.
        let src_w = out.weights()[h].clone();
        let src_b = out.biases()[h].clone();
        for (i, &s) in perm.iter().enumerate() {
            out.weights_mut()[h].row_mut(i).copy_from_slice(src_w.row(s));
            out.biases_mut()[h][i] = src_b[s];
        }
        // Columns of layer h+1.
        let src_next = out.weights()[h + 1].clone();
        let next = &mut out.weights_mut()[h + 1];
        for r in 0..next.rows() {
            for (i, &s) in perm.iter().enumerate() {
                next.set(r, i, src_next.get(r, s));
            }
        }
    }
    Ok(out)
}

/// Elementwise convex combination lambda * a + (1 - lambda) * b.
pub fn interpolate(a: &MlpModel, b_aligned: &MlpModel, lambda: f64) -> Result<MlpModel> {
    if !a.same_architecture(b_aligned) {
        return Err(Error::Usage("interpolating across architectures".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Usage(format!("lambda {lambda} outside [0,1]")));
    }
    let mut out = a.clone();
    for (w, wb) in out.weights_mut().iter_mut().zip(b_aligned.weights()) {
        for (v, &y) in w.as_mut_slice().iter_mut().zip(wb.as_slice()) {
            *v = lambda * *v + (1.0 - lambda) * y;
        }
    }
    for (b, bb) in out.biases_mut().iter_mut().zip(b_aligned.biases()) {
        for (v, &y) in b.iter_mut().zip(bb) {
            *v = lambda * *v + (1.0 - lambda) * y;
        }
    }
    Ok(out)
}
