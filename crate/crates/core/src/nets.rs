//! The scale/rescale/translation networks and their parameter container.
//!
//! Two independent stacks share one architecture: the `V` stack drives
//! momentum updates (inputs: position, energy gradient, time code) and the
//! `X` stack drives position updates (inputs: masked position, momentum,
//! time code). Each stack is a two-hidden-layer ReLU MLP with three heads:
//!
//!   h1 = relu(W1 a + W2 b + W3 tau + b1)
//!   h2 = relu(W4 h1 + b4)
//!   S  = lambda_s * tanh(Ws h2 + bs)
//!   Q  = lambda_q * tanh(Wq h2 + bq)
//!   T  = Wt h2 + bt
//!
//! All parameters live in one flat `Vec<f64>` so the tape engine and the
//! optimizer can treat them uniformly. Head weights and the output scales
//! start at zero, which makes a freshly initialized sampler exactly plain
//! HMC. The integrator step size is carried as a log-parameterized scalar at
//! the end of the flat vector so it can optionally be trained.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("step index {t} outside 1..={m}")]
    TimeOutOfRange { t: usize, m: usize },
    #[error("invalid network shape: {0}")]
    InvalidShape(String),
}

/// Which of the two parameter stacks to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stack {
    /// Momentum-update networks S_v, Q_v, T_v.
    V,
    /// Position-update networks S_x, Q_x, T_x.
    X,
}

pub const STACKS: [Stack; 2] = [Stack::V, Stack::X];

/// Dimension of the cyclic time encoding.
pub const TIME_DIM: usize = 2;

/// (cos(2 pi t / M), sin(2 pi t / M)) for step t in 1..=M.
pub fn encode_time(t: usize, m_steps: usize) -> Result<[f64; 2], NetError> {
    if t < 1 || t > m_steps {
        return Err(NetError::TimeOutOfRange { t, m: m_steps });
    }
    let angle = 2.0 * std::f64::consts::PI * t as f64 / m_steps as f64;
    Ok([angle.cos(), angle.sin()])
}

/// Per-stack weight fields, in flat-layout order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    W1,
    W2,
    W3,
    B1,
    W4,
    B4,
    Ws,
    Bs,
    Wq,
    Bq,
    Wt,
    Bt,
    LambdaS,
    LambdaQ,
}

pub const FIELDS: [Field; 14] = [
    Field::W1,
    Field::W2,
    Field::W3,
    Field::B1,
    Field::W4,
    Field::B4,
    Field::Ws,
    Field::Bs,
    Field::Wq,
    Field::Bq,
    Field::Wt,
    Field::Bt,
    Field::LambdaS,
    Field::LambdaQ,
];

impl Field {
    pub fn name(self) -> &'static str {
        match self {
            Field::W1 => "w1",
            Field::W2 => "w2",
            Field::W3 => "w3",
            Field::B1 => "b1",
            Field::W4 => "w4",
            Field::B4 => "b4",
            Field::Ws => "w_s",
            Field::Bs => "b_s",
            Field::Wq => "w_q",
            Field::Bq => "b_q",
            Field::Wt => "w_t",
            Field::Bt => "b_t",
            Field::LambdaS => "lambda_s",
            Field::LambdaQ => "lambda_q",
        }
    }

    pub fn is_head(self) -> bool {
        matches!(
            self,
            Field::Ws
                | Field::Bs
                | Field::Wq
                | Field::Bq
                | Field::Wt
                | Field::Bt
                | Field::LambdaS
                | Field::LambdaQ
        )
    }
}

/// Flat-vector layout for a given state dimension and hidden width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub n_hidden: usize,
}

impl Layout {
    /// (rows, cols) of a field; vectors are (len, 1).
    pub fn shape(&self, f: Field) -> (usize, usize) {
        let (n, nh) = (self.n, self.n_hidden);
        match f {
            Field::W1 | Field::W2 => (nh, n),
            Field::W3 => (nh, TIME_DIM),
            Field::B1 | Field::B4 => (nh, 1),
            Field::W4 => (nh, nh),
            Field::Ws | Field::Wq | Field::Wt => (n, nh),
            Field::Bs | Field::Bq | Field::Bt => (n, 1),
            Field::LambdaS | Field::LambdaQ => (1, 1),
        }
    }

    pub fn field_len(&self, f: Field) -> usize {
        let (r, c) = self.shape(f);
        r * c
    }

    pub fn stack_len(&self) -> usize {
        FIELDS.iter().map(|&f| self.field_len(f)).sum()
    }

    /// Total flat length: both stacks plus the trailing log step size.
    pub fn total_len(&self) -> usize {
        2 * self.stack_len() + 1
    }

    pub fn stack_base(&self, stack: Stack) -> usize {
        match stack {
            Stack::V => 0,
            Stack::X => self.stack_len(),
        }
    }

    /// Flat offset of a field within the whole parameter vector.
    pub fn offset(&self, stack: Stack, f: Field) -> usize {
        let mut off = self.stack_base(stack);
        for &g in &FIELDS {
            if g == f {
                return off;
            }
            off += self.field_len(g);
        }
        unreachable!()
    }

    pub fn log_eps_offset(&self) -> usize {
        2 * self.stack_len()
    }
}

/// Borrowed view of one stack, for the plain (untaped) forward pass.
pub struct StackView<'a> {
    pub w1: &'a [f64],
    pub w2: &'a [f64],
    pub w3: &'a [f64],
    pub b1: &'a [f64],
    pub w4: &'a [f64],
    pub b4: &'a [f64],
    pub ws: &'a [f64],
    pub bs: &'a [f64],
    pub wq: &'a [f64],
    pub bq: &'a [f64],
    pub wt: &'a [f64],
    pub bt: &'a [f64],
    pub lambda_s: f64,
    pub lambda_q: f64,
}

/// All learnable parameters, flat, plus the shape metadata to address them.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub theta: Vec<f64>,
    layout: Layout,
    n_steps: usize,
}

impl NetParams {
    /// Seeded initialization: hidden layers Glorot-uniform, output heads and
    /// scale gates zero (so every head evaluates to the zero vector), step
    /// size stored as ln(step_size). Same seed, same bits.
    pub fn init(
        n: usize,
        n_hidden: usize,
        n_steps: usize,
        step_size: f64,
        seed: u64,
    ) -> Self {
        assert!(n >= 1 && n_hidden >= 1 && n_steps >= 1);
        assert!(step_size > 0.0);
        let layout = Layout { n, n_hidden };
        let mut theta = vec![0.0; layout.total_len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for stack in STACKS {
            for f in [Field::W1, Field::W2, Field::W3, Field::W4] {
                let (rows, cols) = layout.shape(f);
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                let off = layout.offset(stack, f);
                for w in theta[off..off + rows * cols].iter_mut() {
                    *w = rng.random_range(-bound..bound);
                }
            }
        }
        theta[layout.log_eps_offset()] = step_size.ln();
        NetParams { theta, layout, n_steps }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.n
    }

    pub fn n_hidden(&self) -> usize {
        self.layout.n_hidden
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn step_size(&self) -> f64 {
        self.theta[self.layout.log_eps_offset()].exp()
    }

    pub fn set_step_size(&mut self, eps: f64) {
        assert!(eps > 0.0);
        self.theta[self.layout.log_eps_offset()] = eps.ln();
    }

    pub fn field(&self, stack: Stack, f: Field) -> &[f64] {
        let off = self.layout.offset(stack, f);
        &self.theta[off..off + self.layout.field_len(f)]
    }

    pub fn field_mut(&mut self, stack: Stack, f: Field) -> &mut [f64] {
        let off = self.layout.offset(stack, f);
        let len = self.layout.field_len(f);
        &mut self.theta[off..off + len]
    }

    pub fn view(&self, stack: Stack) -> StackView<'_> {
        StackView {
            w1: self.field(stack, Field::W1),
            w2: self.field(stack, Field::W2),
            w3: self.field(stack, Field::W3),
            b1: self.field(stack, Field::B1),
            w4: self.field(stack, Field::W4),
            b4: self.field(stack, Field::B4),
            ws: self.field(stack, Field::Ws),
            bs: self.field(stack, Field::Bs),
            wq: self.field(stack, Field::Wq),
            bq: self.field(stack, Field::Bq),
            wt: self.field(stack, Field::Wt),
            bt: self.field(stack, Field::Bt),
            lambda_s: self.field(stack, Field::LambdaS)[0],
            lambda_q: self.field(stack, Field::LambdaQ)[0],
        }
    }

    /// True when every head weight, bias and scale gate is exactly zero,
    /// i.e. the sampler reduces to plain HMC.
    pub fn heads_are_zero(&self) -> bool {
        STACKS.iter().all(|&stack| {
            FIELDS
                .iter()
                .filter(|f| f.is_head())
                .all(|&f| self.field(stack, f).iter().all(|&w| w == 0.0))
        })
    }

    /// Copy with all head weights and scale gates forced to zero; used for
    /// the plain-HMC sampling mode.
    pub fn zeroed_heads(&self) -> Self {
        let mut p = self.clone();
        for stack in STACKS {
            for f in FIELDS.iter().filter(|f| f.is_head()) {
                for w in p.field_mut(stack, *f) {
                    *w = 0.0;
                }
            }
        }
        p
    }

    /// Evaluate one stack at (a, b, tau). Results land in `out`.
    pub fn forward(
        &self,
        stack: Stack,
        a: &[f64],
        b: &[f64],
        tcode: [f64; 2],
        out: &mut NetScratch,
    ) {
        let n = self.layout.n;
        let nh = self.layout.n_hidden;
        debug_assert_eq!(a.len(), n);
        debug_assert_eq!(b.len(), n);
        let v = self.view(stack);

        for r in 0..nh {
            let mut acc = v.b1[r];
            let row1 = &v.w1[r * n..(r + 1) * n];
            let row2 = &v.w2[r * n..(r + 1) * n];
            for c in 0..n {
                acc += row1[c] * a[c] + row2[c] * b[c];
            }
            acc += v.w3[r * TIME_DIM] * tcode[0] + v.w3[r * TIME_DIM + 1] * tcode[1];
            out.h1[r] = acc.max(0.0);
        }
        for r in 0..nh {
            let row = &v.w4[r * nh..(r + 1) * nh];
            let mut acc = v.b4[r];
            for c in 0..nh {
                acc += row[c] * out.h1[c];
            }
            out.h2[r] = acc.max(0.0);
        }
        for r in 0..n {
            let (rs, rq, rt) = (
                &v.ws[r * nh..(r + 1) * nh],
                &v.wq[r * nh..(r + 1) * nh],
                &v.wt[r * nh..(r + 1) * nh],
            );
            let (mut zs, mut zq, mut zt) = (v.bs[r], v.bq[r], v.bt[r]);
            for c in 0..nh {
                let h = out.h2[c];
                zs += rs[c] * h;
                zq += rq[c] * h;
                zt += rt[c] * h;
            }
            out.s[r] = v.lambda_s * zs.tanh();
            out.q[r] = v.lambda_q * zq.tanh();
            out.t[r] = zt;
        }
    }
}

/// Reusable buffers for [`NetParams::forward`].
#[derive(Debug, Clone)]
pub struct NetScratch {
    h1: Vec<f64>,
    h2: Vec<f64>,
    pub s: Vec<f64>,
    pub q: Vec<f64>,
    pub t: Vec<f64>,
}

impl NetScratch {
    pub fn new(n: usize, n_hidden: usize) -> Self {
        NetScratch {
            h1: vec![0.0; n_hidden],
            h2: vec![0.0; n_hidden],
            s: vec![0.0; n],
            q: vec![0.0; n],
            t: vec![0.0; n],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn time_encoding_walks_the_unit_circle() {
        let full = encode_time(4, 4).unwrap();
        assert!((full[0] - 1.0).abs() < 1e-15 && full[1].abs() < 1e-15);
        let quarter = encode_time(1, 4).unwrap();
        assert!(quarter[0].abs() < 1e-15 && (quarter[1] - 1.0).abs() < 1e-15);
        let half = encode_time(2, 4).unwrap();
        assert!((half[0] + 1.0).abs() < 1e-15 && half[1].abs() < 1e-15);
        assert!(encode_time(0, 4).is_err());
        assert!(encode_time(5, 4).is_err());
    }

    #[test]
    fn init_is_deterministic_and_heads_are_zero() {
        let a = NetParams::init(2, 10, 5, 0.1, 7);
        let b = NetParams::init(2, 10, 5, 0.1, 7);
        assert_eq!(a.theta, b.theta);
        let c = NetParams::init(2, 10, 5, 0.1, 8);
        assert_ne!(a.theta, c.theta);
        assert!(a.heads_are_zero());
        assert!((a.step_size() - 0.1).abs() < 1e-16);
    }

    #[test]
    fn zero_heads_force_zero_outputs() {
        let p = NetParams::init(3, 8, 4, 0.2, 1);
        let mut out = NetScratch::new(3, 8);
        let tcode = encode_time(2, 4).unwrap();
        p.forward(Stack::V, &[1.0, -2.0, 0.5], &[0.3, 0.1, -0.9], tcode, &mut out);
        assert_eq!(out.s, vec![0.0; 3]);
        assert_eq!(out.q, vec![0.0; 3]);
        assert_eq!(out.t, vec![0.0; 3]);
    }

    #[test]
    fn head_outputs_have_state_dimension() {
        let p = NetParams::init(2, 10, 3, 0.1, 9);
        let out = NetScratch::new(2, 10);
        assert_eq!(out.s.len(), 2);
        assert_eq!(out.q.len(), 2);
        assert_eq!(out.t.len(), 2);
        let _ = p;
    }

    #[test]
    fn lambda_gates_bound_the_heads() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let mut p = NetParams::init(2, 6, 3, 0.1, 2);
        for stack in STACKS {
            for f in FIELDS.iter().filter(|f| f.is_head()) {
                for w in p.field_mut(stack, *f) {
                    *w = rng.random_range(-3.0..3.0);
                }
            }
        }
        let lam_s = p.field(Stack::V, Field::LambdaS)[0];
        let mut out = NetScratch::new(2, 6);
        let tcode = encode_time(1, 3).unwrap();
        // large inputs saturate the tanh
        p.forward(Stack::V, &[50.0, -40.0], &[30.0, 60.0], tcode, &mut out);
        for i in 0..2 {
            assert!(out.s[i].abs() <= lam_s.abs() + 1e-12);
        }
        // scale gate of zero kills S entirely
        p.field_mut(Stack::V, Field::LambdaS)[0] = 0.0;
        p.forward(Stack::V, &[50.0, -40.0], &[30.0, 60.0], tcode, &mut out);
        assert_eq!(out.s, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_is_pure() {
        let mut p = NetParams::init(2, 5, 3, 0.1, 4);
        for w in p.field_mut(Stack::X, Field::Ws) {
            *w = 0.37;
        }
        p.field_mut(Stack::X, Field::LambdaS)[0] = 0.5;
        let mut o1 = NetScratch::new(2, 5);
        let mut o2 = NetScratch::new(2, 5);
        let tcode = encode_time(2, 3).unwrap();
        p.forward(Stack::X, &[0.1, 0.2], &[-0.3, 0.4], tcode, &mut o1);
        p.forward(Stack::X, &[0.1, 0.2], &[-0.3, 0.4], tcode, &mut o2);
        assert_eq!(o1.s, o2.s);
        assert_eq!(o1.q, o2.q);
        assert_eq!(o1.t, o2.t);
    }

    #[test]
    fn layout_offsets_tile_the_vector() {
        let layout = Layout { n: 3, n_hidden: 7 };
        let mut covered = vec![false; layout.total_len()];
        for stack in STACKS {
            for &f in &FIELDS {
                let off = layout.offset(stack, f);
                for c in covered.iter_mut().skip(off).take(layout.field_len(f)) {
                    assert!(!*c, "overlapping fields");
                    *c = true;
                }
            }
        }
        covered[layout.log_eps_offset()] = true;
        assert!(covered.iter().all(|&c| c));
    }
}
