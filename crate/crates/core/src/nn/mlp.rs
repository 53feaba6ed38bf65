//! Three-layer perceptron (two ReLU hidden layers, linear output) with a
//! manual backward pass.

use rand::Rng;

use super::linalg::{add_assign, axpy, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub w3: Matrix,
    pub b3: Vec<f64>,
}

/// Intermediate activations of one forward call, kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpTape {
    pub input: Vec<f64>,
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z2: Vec<f64>,
    pub a2: Vec<f64>,
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * bound)
}

impl Mlp {
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: glorot(hidden, input, rng),
            b1: vec![0.0; hidden],
            w2: glorot(hidden, hidden, rng),
            b2: vec![0.0; hidden],
            w3: glorot(output, hidden, rng),
            b3: vec![0.0; output],
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: Matrix::zeros(hidden, input),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(hidden, hidden),
            b2: vec![0.0; hidden],
            w3: Matrix::zeros(output, hidden),
            b3: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w3.rows()
    }

    pub fn forward(&self, input: &[f64], out: &mut [f64]) {
        let h = self.hidden_dim();
        let mut z1 = vec![0.0; h];
        self.w1.matvec_add(input, &self.b1, &mut z1);
        for v in &mut z1 {
            *v = v.max(0.0);
        }
        let mut z2 = vec![0.0; h];
        self.w2.matvec_add(&z1, &self.b2, &mut z2);
        for v in &mut z2 {
            *v = v.max(0.0);
        }
        self.w3.matvec_add(&z2, &self.b3, out);
    }

    /// Forward pass that records inputs and pre/post activations on `tape`.
    pub fn forward_taped(&self, input: &[f64], out: &mut [f64], tape: &mut MlpTape) {
        let h = self.hidden_dim();
        tape.input.clear();
        tape.input.extend_from_slice(input);
        tape.z1.resize(h, 0.0);
        self.w1.matvec_add(input, &self.b1, &mut tape.z1);
        tape.a1.clear();
        tape.a1.extend(tape.z1.iter().map(|&v| v.max(0.0)));
        tape.z2.resize(h, 0.0);
        self.w2.matvec_add(&tape.a1, &self.b2, &mut tape.z2);
        tape.a2.clear();
        tape.a2.extend(tape.z2.iter().map(|&v| v.max(0.0)));
        self.w3.matvec_add(&tape.a2, &self.b3, out);
    }

    /// Accumulates parameter gradients into `grads` and, when requested, the
    /// gradient with respect to the input into `dinput`.
    pub fn backward(
        &self,
        tape: &MlpTape,
        dout: &[f64],
        grads: &mut Mlp,
        dinput: Option<&mut [f64]>,
    ) {
        // Output layer.
        for (r, &g) in dout.iter().enumerate() {
            axpy(g, &tape.a2, grads.w3.row_mut(r));
        }
        add_assign(dout, &mut grads.b3);
        let mut dz2 = vec![0.0; self.hidden_dim()];
        self.w3.matvec_transpose_acc(dout, &mut dz2);
        for (d, &z) in dz2.iter_mut().zip(&tape.z2) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        // Second hidden layer.
        for (r, &g) in dz2.iter().enumerate() {
            if g != 0.0 {
                axpy(g, &tape.a1, grads.w2.row_mut(r));
            }
        }
        add_assign(&dz2, &mut grads.b2);
        let mut dz1 = vec![0.0; self.hidden_dim()];
        self.w2.matvec_transpose_acc(&dz2, &mut dz1);
        for (d, &z) in dz1.iter_mut().zip(&tape.z1) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        // First hidden layer.
        for (r, &g) in dz1.iter().enumerate() {
            if g != 0.0 {
                axpy(g, &tape.input, grads.w1.row_mut(r));
            }
        }
        add_assign(&dz1, &mut grads.b1);
        if let Some(dinput) = dinput {
            self.w1.matvec_transpose_acc(&dz1, dinput);
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.w1.data(),
            &self.b1,
            self.w2.data(),
            &self.b2,
            self.w3.data(),
            &self.b3,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.data_mut(),
            &mut self.b1,
            self.w2.data_mut(),
            &mut self.b2,
            self.w3.data_mut(),
            &mut self.b3,
        ]
    }
}
