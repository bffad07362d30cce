//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use typoparse::autodiff::{
    affine, bilstm, lstm_cell, AutodiffError, BiLstmLayer, Gradients, LstmWeights, Params, Tape,
    Tensor, Var,
};

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so that two gradients that
/// are both numerically zero compare as equal.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

/// Fourth-order central finite differences of `loss` with respect to every parameter
/// entry, compared against `analytic`. Returns the largest relative error
/// and the parameter it occurred in.
pub fn fd_check(
    params: &Params,
    analytic: &Gradients,
    loss: impl Fn(&Params) -> f64,
) -> (f64, String) {
    let mut worst = (0.0, String::new());
    let mut probe = params.clone();
    for id in params.ids() {
        for i in 0..params.get(id).len() {
            let original = params.get(id).data()[i];
            let mut at = |offset: f64| {
                probe.get_mut(id).data_mut()[i] = original + offset;
                loss(&probe)
            };
            let h = FD_STEP;
            let numeric = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
            probe.get_mut(id).data_mut()[i] = original;
            let err = rel_error(analytic.get(id).data()[i], numeric);
            if err > worst.0 {
                worst = (err, format!("{}[{i}] analytic {:.6e} numeric {numeric:.6e}", params.name(id), analytic.get(id).data()[i]));
            }
        }
    }
    worst
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

type Build = fn(&mut Tape, &Params) -> Result<Var, AutodiffError>;

pub struct OpCase {
    pub name: &'static str,
    pub params: Params,
    build: Build,
}

impl OpCase {
    /// Scalar loss: the op's output dotted with a fixed random weighting.
    pub fn loss_var(&self, tape: &mut Tape, params: &Params) -> Result<Var, AutodiffError> {
        let y = (self.build)(tape, params)?;
        let shape = tape.value(y).shape().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let w = tape.constant(random_tensor(&mut rng, &shape));
        let yw = tape.mul(y, w)?;
        tape.sum(yw)
    }

    pub fn loss(&self, params: &Params) -> f64 {
        let mut tape = Tape::training(params, 5);
        let l = self.loss_var(&mut tape, params).unwrap();
        tape.value(l).item()
    }

    /// Worst relative error between analytic and finite-difference
    /// gradients.
    pub fn check(&self) -> (f64, String) {
        let mut tape = Tape::training(&self.params, 5);
        let l = self.loss_var(&mut tape, &self.params).unwrap();
        let grads = tape.backward(l).unwrap();
        fd_check(&self.params, &grads, |p| self.loss(p))
    }
}

fn p(tape: &mut Tape, params: &Params, name: &str) -> Var {
    tape.param(params.id(name).unwrap())
}

fn case(name: &'static str, shapes: &[(&str, &[usize])], build: Build) -> OpCase {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 31 + 7);
    let mut params = Params::new();
    for (n, s) in shapes {
        params.insert(*n, random_tensor(&mut rng, s));
    }
    OpCase {
        name,
        params,
        build,
    }
}

fn lstm_params(params: &mut Params, prefix: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> LstmWeights {
    LstmWeights {
        w: params.insert(format!("{prefix}.w"), random_tensor(rng, &[4 * hidden, input + hidden])),
        b: params.insert(format!("{prefix}.b"), random_tensor(rng, &[4 * hidden])),
        hidden,
    }
}

fn lstm_weights(params: &Params, prefix: &str, hidden: usize) -> LstmWeights {
    LstmWeights {
        w: params.id(&format!("{prefix}.w")).unwrap(),
        b: params.id(&format!("{prefix}.b")).unwrap(),
        hidden,
    }
}

/// Every operator exposed by the autodiff module, on small random inputs.
pub fn op_cases() -> Vec<OpCase> {
    let mut cases = vec![
        case("matmul", &[("a", &[3, 4]), ("b", &[4, 2])], |t, ps| {
            let (a, b) = (p(t, ps, "a"), p(t, ps, "b"));
            t.matmul(a, b)
        }),
        case("matmul_nt", &[("a", &[3, 4]), ("b", &[2, 4])], |t, ps| {
            let (a, b) = (p(t, ps, "a"), p(t, ps, "b"));
            t.matmul_nt(a, b)
        }),
        case("matvec", &[("a", &[3, 4]), ("x", &[4])], |t, ps| {
            let (a, x) = (p(t, ps, "a"), p(t, ps, "x"));
            t.matvec(a, x)
        }),
        case("affine", &[("x", &[3, 4]), ("w", &[2, 4]), ("b", &[2])], |t, ps| {
            let (x, w, b) = (p(t, ps, "x"), p(t, ps, "w"), p(t, ps, "b"));
            affine(t, x, w, b)
        }),
        case("affine_vector", &[("x", &[4]), ("w", &[2, 4]), ("b", &[2])], |t, ps| {
            let (x, w, b) = (p(t, ps, "x"), p(t, ps, "w"), p(t, ps, "b"));
            affine(t, x, w, b)
        }),
        case("add", &[("a", &[2, 3]), ("b", &[2, 3])], |t, ps| {
            let (a, b) = (p(t, ps, "a"), p(t, ps, "b"));
            t.add(a, b)
        }),
        case("add_row", &[("a", &[2, 3]), ("b", &[3])], |t, ps| {
            let (a, b) = (p(t, ps, "a"), p(t, ps, "b"));
            t.add_row(a, b)
        }),
        case("mul", &[("a", &[5]), ("b", &[5])], |t, ps| {
            let (a, b) = (p(t, ps, "a"), p(t, ps, "b"));
            t.mul(a, b)
        }),
        case("scale", &[("a", &[4])], |t, ps| {
            let a = p(t, ps, "a");
            t.scale(a, -2.5)
        }),
        case("tanh", &[("a", &[6])], |t, ps| {
            let a = p(t, ps, "a");
            t.tanh(a)
        }),
        case("sigmoid", &[("a", &[6])], |t, ps| {
            let a = p(t, ps, "a");
            t.sigmoid(a)
        }),
        case("concat", &[("a", &[2]), ("b", &[3])], |t, ps| {
            let (a, b) = (p(t, ps, "a"), p(t, ps, "b"));
            t.concat(&[a, b, a])
        }),
        case("slice", &[("a", &[7])], |t, ps| {
            let a = p(t, ps, "a");
            t.slice(a, 2, 3)
        }),
        case("stack_rows", &[("a", &[3]), ("b", &[3])], |t, ps| {
            let (a, b) = (p(t, ps, "a"), p(t, ps, "b"));
            t.stack_rows(&[a, b, a])
        }),
        case("gather_rows", &[("a", &[4, 3])], |t, ps| {
            let a = p(t, ps, "a");
            t.gather_rows(a, &[2, 0, 2])
        }),
        case("embedding_lookup", &[("e", &[5, 3])], |t, ps| {
            let e = p(t, ps, "e");
            t.embedding_lookup(e, 3)
        }),
        case("dropout", &[("a", &[20])], |t, ps| {
            let a = p(t, ps, "a");
            t.dropout(a, 0.33)
        }),
        case("max_pool", &[("a", &[4]), ("b", &[4]), ("c", &[4])], |t, ps| {
            let (a, b, c) = (p(t, ps, "a"), p(t, ps, "b"), p(t, ps, "c"));
            t.max_pool(&[a, b, c])
        }),
        case("sum", &[("a", &[3, 2])], |t, ps| {
            let a = p(t, ps, "a");
            t.sum(a)
        }),
        case("softmax_cross_entropy", &[("z", &[5])], |t, ps| {
            let z = p(t, ps, "z");
            t.softmax_cross_entropy(z, 3)
        }),
        case("cross_entropy_rows", &[("z", &[3, 4])], |t, ps| {
            let z = p(t, ps, "z");
            t.cross_entropy_rows(z, &[0, 3, 1], &[Some(1), None, Some(2)])
        }),
        case("feature_bias", &[("v", &[6])], |t, ps| {
            let v = p(t, ps, "v");
            t.feature_bias(v, 2, 2, vec![vec![0, 3], vec![], vec![5], vec![3, 1]])
        }),
        case("bilinear", &[("a", &[3, 2]), ("b", &[3, 2]), ("u", &[8, 2])], |t, ps| {
            let (a, b, u) = (p(t, ps, "a"), p(t, ps, "b"), p(t, ps, "u"));
            t.bilinear(a, b, u)
        }),
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = Params::new();
    params.insert("x", random_tensor(&mut rng, &[3]));
    params.insert("h", random_tensor(&mut rng, &[2]));
    params.insert("c", random_tensor(&mut rng, &[2]));
    lstm_params(&mut params, "cell", 3, 2, &mut rng);
    cases.push(OpCase {
        name: "lstm_cell",
        params,
        build: |t, ps| {
            let (x, h, c) = (p(t, ps, "x"), p(t, ps, "h"), p(t, ps, "c"));
            let (h, c) = lstm_cell(t, x, h, c, &lstm_weights(ps, "cell", 2))?;
            t.concat(&[h, c])
        },
    });

    let mut params = Params::new();
    params.insert("xs", random_tensor(&mut rng, &[4, 3]));
    for (prefix, input) in [("l0f", 3), ("l0b", 3), ("l1f", 4), ("l1b", 4)] {
        lstm_params(&mut params, prefix, input, 2, &mut rng);
    }
    cases.push(OpCase {
        name: "bilstm",
        params,
        build: |t, ps| {
            let xs = p(t, ps, "xs");
            let inputs: Vec<Var> = (0..4)
                .map(|i| t.embedding_lookup(xs, i))
                .collect::<Result<_, _>>()?;
            let layers = [
                BiLstmLayer {
                    forward: lstm_weights(ps, "l0f", 2),
                    backward: lstm_weights(ps, "l0b", 2),
                },
                BiLstmLayer {
                    forward: lstm_weights(ps, "l1f", 2),
                    backward: lstm_weights(ps, "l1b", 2),
                },
            ];
            let hs = bilstm(t, &inputs, &layers, 0.25)?;
            let pooled = t.max_pool(&hs)?;
            let last = *hs.last().unwrap();
            t.concat(&[pooled, last])
        },
    });
    cases
}
