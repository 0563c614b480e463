//! Step integrator shared by the memory-kernel SSE and the lattice field model.
//!
//! The memory term is −Σ_c g_c A_c ∫₀ᵗ e^{−κ_c(t−s)} Ô_c(t,s) ds ψ with
//! Ô_c(t,s) = B_c (exact dephasing) or e^{−iH(t−s)} B_c e^{iH(t−s)} (weak
//! coupling). Over step k the integral is evaluated on the grid as
//! dt·(½·Ô(t,t) + Σ_{l=1}^{k} e^{−κ l dt} Ô(t, t − l dt)), which is the
//! quadrature that makes the discrete noise covariance and the memory term
//! exactly consistent. The history sum obeys
//! S_{k+1} = e^{−κ dt}·U(B + S_k)U† with U = e^{−iH dt}, so each step is O(1)
//! in the number of past steps.
//!
//! Each step applies exp(dt·G_k) with
//! G_k = −iH − i Σ_m z_m D_m − M̄_k − C, where D_m are the drive operators and
//! C is a constant (white-noise) dissipator.

use crate::error::Result;
use crate::hilbert::{c64, exp_apply_small, expm, CMatrix, CVector, C64};
use crate::memory::Closure;

#[derive(Clone, Debug)]
pub(crate) struct KernelChannel {
    pub weight: C64,
    pub rate: C64,
    pub left: CMatrix,
    pub right: CMatrix,
}

#[derive(Clone, Debug)]
struct Channel {
    weight: C64,
    decay: C64,
    left: CMatrix,
    right: CMatrix,
    left_right: CMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum History {
    Scalar(Vec<C64>),
    Operator(Vec<CMatrix>),
}

#[derive(Clone, Debug)]
pub(crate) struct MemoryEngine {
    dt: f64,
    closure: Closure,
    drives: Vec<CMatrix>,
    channels: Vec<Channel>,
    /// −iH − C − Σ_c g_c (dt/2) A_c B_c
    constant: CMatrix,
    free_step: Option<(CMatrix, CMatrix)>,
}

impl MemoryEngine {
    pub fn new(
        h: &CMatrix,
        dissipator: &CMatrix,
        drives: Vec<CMatrix>,
        channels: Vec<KernelChannel>,
        closure: Closure,
        dt: f64,
    ) -> Result<Self> {
        let mut constant = h * c64(0.0, -1.0) - dissipator;
        let channels: Vec<Channel> = channels
            .into_iter()
            .map(|c| {
                let left_right = &c.left * &c.right;
                constant -= &left_right * (c.weight * 0.5 * dt);
                Channel { weight: c.weight, decay: (-c.rate * dt).exp(), left: c.left, right: c.right, left_right }
            })
            .collect();
        let free_step = match closure {
            Closure::ExactDephasing => None,
            Closure::WeakCoupling => {
                let u = expm(&(h * c64(0.0, -dt)))?;
                let u_adj = u.adjoint();
                Some((u, u_adj))
            }
        };
        Ok(Self { dt, closure, drives, channels, constant, free_step })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn initial_history(&self) -> History {
        let n = self.channels.len();
        match self.closure {
            Closure::ExactDephasing => History::Scalar(vec![C64::default(); n]),
            Closure::WeakCoupling => {
                let d = self.constant.nrows();
                History::Operator(vec![CMatrix::zeros(d, d); n])
            }
        }
    }

    /// M̄_k without the constant dissipator: Σ_c g_c dt (½ A_c B_c + A_c S_c).
    pub fn memory_operator(&self, history: &History) -> CMatrix {
        let d = self.constant.nrows();
        let mut m = CMatrix::zeros(d, d);
        for (i, c) in self.channels.iter().enumerate() {
            let w = c.weight * self.dt;
            m += &c.left_right * (w * 0.5);
            match history {
                History::Scalar(s) => m += &c.left_right * (w * s[i]),
                History::Operator(s) => m += &c.left * &s[i] * w,
            }
        }
        m
    }

    /// dt Σ_c g_c s_c for scalar histories.
    pub fn history_scalar(&self, history: &History) -> Option<C64> {
        match history {
            History::Scalar(s) => Some(self.channels.iter().zip(s).map(|(c, si)| c.weight * si * self.dt).sum()),
            History::Operator(_) => None,
        }
    }

    /// dt Σ_c g_c S_c for operator histories.
    pub fn history_operator(&self, history: &History) -> Option<CMatrix> {
        match history {
            History::Scalar(_) => None,
            History::Operator(s) => {
                let d = self.constant.nrows();
                Some(self.channels.iter().zip(s).fold(CMatrix::zeros(d, d), |acc, (c, si)| acc + si * (c.weight * self.dt)))
            }
        }
    }

    fn generator(&self, history: &History, drive: &[C64]) -> CMatrix {
        let mut g = self.constant.clone();
        for (d, z) in self.drives.iter().zip(drive) {
            if *z != C64::default() {
                g -= d * (c64(0.0, 1.0) * z);
            }
        }
        for (i, c) in self.channels.iter().enumerate() {
            let w = c.weight * self.dt;
            match history {
                History::Scalar(s) => {
                    if s[i] != C64::default() {
                        g -= &c.left_right * (w * s[i]);
                    }
                }
                History::Operator(s) => g -= &c.left * &s[i] * w,
            }
        }
        g
    }

    /// Advances ψ over one step and the history to the next step.
    pub fn step(&self, psi: &CVector, history: &mut History, drive: &[C64]) -> Result<CVector> {
        let a = self.generator(history, drive) * c64(self.dt, 0.0);
        let out = exp_apply_small(&a, psi)?;
        self.advance_history(history);
        Ok(out)
    }

    pub fn advance_history(&self, history: &mut History) {
        match history {
            History::Scalar(s) => {
                for (si, c) in s.iter_mut().zip(&self.channels) {
                    *si = c.decay * (*si + 1.0);
                }
            }
            History::Operator(s) => {
                let (u, u_adj) = self.free_step.as_ref().expect("weak-coupling engine has a free propagator");
                for (si, c) in s.iter_mut().zip(&self.channels) {
                    *si = u * (&c.right + &*si) * u_adj * c.decay;
                }
            }
        }
    }
}
