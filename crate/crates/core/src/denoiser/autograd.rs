//! Minimal reverse-mode differentiation over dense row-major f64 matrices,
//! with the handful of ops the edge-gated graph network needs. Edge tensors
//! have `n * n` rows indexed `i * n + j`.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    /// Position on the tape, which is also the index into the buffers
    /// returned by [`Tape::backward`].
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    /// Row-wise layer norm with gain and bias; caches the normalized input
    /// and the per-row inverse standard deviation.
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ExpandI(Var, usize),
    ExpandJ(Var, usize),
    SumJ(Var, usize),
    SwapIJ(Var, usize),
    LogitDiff(Var),
    /// Mean binary cross-entropy with logits over entries where `mask` is
    /// set.
    Bce {
        z: Var,
        labels: Vec<f64>,
        mask: Vec<bool>,
        count: f64,
    },
}

#[derive(Clone, Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `c[r x m] += a[r x k] * b[k x m]`.
fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], r: usize, k: usize, m: usize) {
    for i in 0..r {
        let crow = &mut c[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(256) }
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { rows, cols, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        self.push(rows, cols, value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (r, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions");
        let mut out = vec![0.0; r * m];
        gemm_acc(self.value(a), self.value(b), &mut out, r, k, m);
        self.push(r, m, out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b));
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(r, c, out, Op::Add(a, b))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c));
        let bias = self.value(row);
        let out = self.value(a).chunks(c).flat_map(|x| x.iter().zip(bias).map(|(u, v)| u + v)).collect();
        self.push(r, c, out, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b));
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push(r, c, out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * s).collect();
        self.push(r, c, out, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(r, c, out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        self.push(r, c, out, Op::Relu(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(gain), (1, c));
        assert_eq!(self.shape(bias), (1, c));
        let xs = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            for k in 0..c {
                let xh = (row[k] - mean) * is;
                xhat[i * c + k] = xh;
                out[i * c + k] = g[k] * xh + b[k];
            }
        }
        self.push(r, c, out, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    /// `n x c` node tensor to `n^2 x c` edge tensor, row `(i, j)` = row `i`.
    pub fn expand_i(&mut self, a: Var, n: usize) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(r, n);
        let src = self.value(a);
        let mut out = Vec::with_capacity(n * n * c);
        for i in 0..n {
            for _ in 0..n {
                out.extend_from_slice(&src[i * c..(i + 1) * c]);
            }
        }
        self.push(n * n, c, out, Op::ExpandI(a, n))
    }

    /// `n x c` node tensor to `n^2 x c` edge tensor, row `(i, j)` = row `j`.
    pub fn expand_j(&mut self, a: Var, n: usize) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(r, n);
        let src = self.value(a);
        let mut out = Vec::with_capacity(n * n * c);
        for _ in 0..n {
            out.extend_from_slice(&src[..n * c]);
        }
        self.push(n * n, c, out, Op::ExpandJ(a, n))
    }

    /// `n^2 x c` edge tensor to `n x c`: row `i` = sum over `j != i`.
    pub fn sum_j(&mut self, a: Var, n: usize) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(r, n * n);
        let src = self.value(a);
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let row = &src[(i * n + j) * c..(i * n + j + 1) * c];
                for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        self.push(n, c, out, Op::SumJ(a, n))
    }

    /// Edge transpose: row `(i, j)` takes row `(j, i)`.
    pub fn swap_ij(&mut self, a: Var, n: usize) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(r, n * n);
        let src = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..n {
            for j in 0..n {
                out[(i * n + j) * c..(i * n + j + 1) * c].copy_from_slice(&src[(j * n + i) * c..(j * n + i + 1) * c]);
            }
        }
        self.push(r, c, out, Op::SwapIJ(a, n))
    }

    /// `r x 2` logits to `r x 1` log-odds `l1 - l0`.
    pub fn logit_diff(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(c, 2);
        let out = self.value(a).chunks(2).map(|l| l[1] - l[0]).collect();
        self.push(r, 1, out, Op::LogitDiff(a))
    }

    pub fn bce_with_logits(&mut self, z: Var, labels: Vec<f64>, mask: Vec<bool>) -> Var {
        let zs = self.value(z);
        assert_eq!(zs.len(), labels.len());
        assert_eq!(zs.len(), mask.len());
        let count = mask.iter().filter(|&&m| m).count() as f64;
        let total: f64 = zs.iter().zip(&labels).zip(&mask).filter(|(_, &m)| m).map(|((&x, &y), _)| softplus(x) - y * x).sum();
        self.push(1, 1, vec![total / count], Op::Bce { z, labels, mask, count })
    }

    /// Reverse pass from a scalar output. Returns one gradient buffer per
    /// tape entry (empty where no gradient flowed).
    pub fn backward(&self, out: Var) -> Vec<Vec<f64>> {
        assert_eq!(self.shape(out), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[out.0] = vec![1.0];
        for idx in (0..=out.0).rev() {
            if grads[idx].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            self.propagate(idx, &g, &mut grads);
            grads[idx] = g;
        }
        grads
    }

    fn acc<'a>(&self, grads: &'a mut [Vec<f64>], v: Var) -> &'a mut [f64] {
        let len = self.nodes[v.0].value.len();
        if grads[v.0].is_empty() {
            grads[v.0] = vec![0.0; len];
        }
        &mut grads[v.0]
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (r, k) = self.shape(*a);
                let m = node.cols;
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = self.acc(grads, *a);
                // dA = G B^T
                for i in 0..r {
                    let grow = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let brow = &bv[p * m..(p + 1) * m];
                        ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
                // dB = A^T G
                let gb = self.acc(grads, *b);
                for i in 0..r {
                    let grow = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let av = av[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for (o, x) in gb[p * m..(p + 1) * m].iter_mut().zip(grow) {
                            *o += av * x;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    for (o, x) in self.acc(grads, *v).iter_mut().zip(g) {
                        *o += x;
                    }
                }
            }
            Op::AddRow(a, row) => {
                for (o, x) in self.acc(grads, *a).iter_mut().zip(g) {
                    *o += x;
                }
                let c = node.cols;
                let gr = self.acc(grads, *row);
                for chunk in g.chunks(c) {
                    for (o, x) in gr.iter_mut().zip(chunk) {
                        *o += x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                for (k, o) in self.acc(grads, *a).iter_mut().enumerate() {
                    *o += g[k] * bv[k];
                }
                for (k, o) in self.acc(grads, *b).iter_mut().enumerate() {
                    *o += g[k] * av[k];
                }
            }
            Op::Scale(a, s) => {
                for (o, x) in self.acc(grads, *a).iter_mut().zip(g) {
                    *o += s * x;
                }
            }
            Op::Sigmoid(a) => {
                for (k, o) in self.acc(grads, *a).iter_mut().enumerate() {
                    let s = node.value[k];
                    *o += g[k] * s * (1.0 - s);
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                for (k, o) in self.acc(grads, *a).iter_mut().enumerate() {
                    if av[k] > 0.0 {
                        *o += g[k];
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (r, c) = (node.rows, node.cols);
                let gv = self.value(*gain).to_vec();
                {
                    let gg = self.acc(grads, *gain);
                    for i in 0..r {
                        for k in 0..c {
                            gg[k] += g[i * c + k] * xhat[i * c + k];
                        }
                    }
                }
                {
                    let gbias = self.acc(grads, *bias);
                    for chunk in g.chunks(c) {
                        for (o, v) in gbias.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                }
                let gx = self.acc(grads, *x);
                let mut dxhat = vec![0.0; c];
                for i in 0..r {
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for k in 0..c {
                        dxhat[k] = g[i * c + k] * gv[k];
                        mean_d += dxhat[k];
                        mean_dx += dxhat[k] * xhat[i * c + k];
                    }
                    mean_d /= c as f64;
                    mean_dx /= c as f64;
                    for k in 0..c {
                        gx[i * c + k] += inv_std[i] * (dxhat[k] - mean_d - xhat[i * c + k] * mean_dx);
                    }
                }
            }
            Op::ExpandI(a, n) => {
                let (n, c) = (*n, node.cols);
                let ga = self.acc(grads, *a);
                for i in 0..n {
                    for j in 0..n {
                        let src = &g[(i * n + j) * c..(i * n + j + 1) * c];
                        for (o, x) in ga[i * c..(i + 1) * c].iter_mut().zip(src) {
                            *o += x;
                        }
                    }
                }
            }
            Op::ExpandJ(a, n) => {
                let (n, c) = (*n, node.cols);
                let ga = self.acc(grads, *a);
                for i in 0..n {
                    for (o, x) in ga[..n * c].iter_mut().zip(&g[i * n * c..(i + 1) * n * c]) {
                        *o += x;
                    }
                }
            }
            Op::SumJ(a, n) => {
                let (n, c) = (*n, node.cols);
                let ga = self.acc(grads, *a);
                for i in 0..n {
                    for j in (0..n).filter(|&j| j != i) {
                        for (o, x) in ga[(i * n + j) * c..(i * n + j + 1) * c].iter_mut().zip(&g[i * c..(i + 1) * c]) {
                            *o += x;
                        }
                    }
                }
            }
            Op::SwapIJ(a, n) => {
                let (n, c) = (*n, node.cols);
                let ga = self.acc(grads, *a);
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..c {
                            ga[(j * n + i) * c + k] += g[(i * n + j) * c + k];
                        }
                    }
                }
            }
            Op::LogitDiff(a) => {
                let ga = self.acc(grads, *a);
                for (k, x) in g.iter().enumerate() {
                    ga[2 * k] -= x;
                    ga[2 * k + 1] += x;
                }
            }
            Op::Bce { z, labels, mask, count } => {
                let zv = self.value(*z).to_vec();
                let gz = self.acc(grads, *z);
                for k in 0..zv.len() {
                    if mask[k] {
                        gz[k] += g[0] * (sigmoid(zv[k]) - labels[k]) / count;
                    }
                }
            }
        }
    }
}
