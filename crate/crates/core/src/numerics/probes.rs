//! Randomized gradient probes for every differentiable operation on the tape.

use rand::Rng;

use super::{Result, Tape, Tensor, UnaryKind, Var};

/// One differentiable operation wired into a scalar loss
/// `sum(op(inputs) * weights)`, where `weights` is the last input.
pub struct OpProbe {
    pub name: &'static str,
    pub inputs: fn(&mut dyn rand::RngCore) -> Vec<Tensor>,
    pub loss: fn(&mut Tape, &[Var]) -> Result<Var>,
}

fn random(rng: &mut dyn rand::RngCore, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
    Tensor::new(shape.to_vec(), data).expect("nonzero shape")
}

fn positive(rng: &mut dyn rand::RngCore, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(0.3..2.5)).collect();
    Tensor::new(shape.to_vec(), data).expect("nonzero shape")
}

fn dim(rng: &mut dyn rand::RngCore) -> usize {
    rng.gen_range(1..=4)
}

fn weighted(tape: &mut Tape, out: Var, weights: Var) -> Result<Var> {
    let prod = tape.mul(out, weights)?;
    tape.sum(prod)
}

fn unary_probe(kind: UnaryKind) -> fn(&mut Tape, &[Var]) -> Result<Var> {
    match kind {
        UnaryKind::Sigmoid => |t, v| {
            let y = t.sigmoid(v[0])?;
            weighted(t, y, v[1])
        },
        UnaryKind::Tanh => |t, v| {
            let y = t.tanh(v[0])?;
            weighted(t, y, v[1])
        },
        UnaryKind::Exp => |t, v| {
            let y = t.exp(v[0])?;
            weighted(t, y, v[1])
        },
        UnaryKind::Log => |t, v| {
            let y = t.log(v[0])?;
            weighted(t, y, v[1])
        },
        UnaryKind::Neg => |t, v| {
            let y = t.neg(v[0])?;
            weighted(t, y, v[1])
        },
    }
}

fn same_shape_pair(rng: &mut dyn rand::RngCore) -> Vec<Tensor> {
    let s = [dim(rng), dim(rng)];
    vec![random(rng, &s), random(rng, &s), random(rng, &s)]
}

fn row_pair(rng: &mut dyn rand::RngCore) -> Vec<Tensor> {
    let (m, n) = (dim(rng), dim(rng));
    vec![random(rng, &[m, n]), random(rng, &[n]), random(rng, &[m, n])]
}

fn scalar_pair(rng: &mut dyn rand::RngCore) -> Vec<Tensor> {
    let s = [dim(rng), dim(rng)];
    vec![random(rng, &s), random(rng, &[1]), random(rng, &s)]
}

fn unary_inputs(rng: &mut dyn rand::RngCore) -> Vec<Tensor> {
    let s = [dim(rng), dim(rng)];
    vec![random(rng, &s), random(rng, &s)]
}

/// The full probe catalog.
pub fn op_probes() -> Vec<OpProbe> {
    let mut probes = vec![
        OpProbe {
            name: "matmul",
            inputs: |rng| {
                let (m, k, n) = (dim(rng), dim(rng), dim(rng));
                vec![random(rng, &[m, k]), random(rng, &[k, n]), random(rng, &[m, n])]
            },
            loss: |t, v| {
                let y = t.matmul(v[0], v[1])?;
                weighted(t, y, v[2])
            },
        },
        OpProbe {
            name: "matmul (matrix-vector)",
            inputs: |rng| {
                let (m, k) = (dim(rng), dim(rng));
                vec![random(rng, &[m, k]), random(rng, &[k]), random(rng, &[m])]
            },
            loss: |t, v| {
                let y = t.matmul(v[0], v[1])?;
                weighted(t, y, v[2])
            },
        },
        OpProbe {
            name: "matmul (vector-matrix)",
            inputs: |rng| {
                let (k, n) = (dim(rng), dim(rng));
                vec![random(rng, &[k]), random(rng, &[k, n]), random(rng, &[n])]
            },
            loss: |t, v| {
                let y = t.matmul(v[0], v[1])?;
                weighted(t, y, v[2])
            },
        },
        OpProbe {
            name: "add",
            inputs: same_shape_pair,
            loss: |t, v| {
                let y = t.add(v[0], v[1])?;
                weighted(t, y, v[2])
            },
        },
        OpProbe {
            name: "add (row broadcast)",
            inputs: row_pair,
            loss: |t, v| {
                let y = t.add(v[0], v[1])?;
                weighted(t, y, v[2])
            },
        },
        OpProbe {
            name: "add (scalar broadcast)",
            inputs: scalar_pair,
            loss: |t, v| {
                let y = t.add(v[1], v[0])?;
                weighted(t, y, v[2])
            },
        },
        OpProbe {
            name: "mul",
            inputs: same_shape_pair,
            loss: |t, v| {
                let y = t.mul(v[0], v[1])?;
                weighted(t, y, v[2])
            },
        },
        OpProbe {
            name: "mul (row broadcast)",
            inputs: row_pair,
            loss: |t, v| {
                let y = t.mul(v[0], v[1])?;
                weighted(t, y, v[2])
            },
        },
        OpProbe {
            name: "mul (scalar broadcast)",
            inputs: scalar_pair,
            loss: |t, v| {
                let y = t.mul(v[0], v[1])?;
                weighted(t, y, v[2])
            },
        },
        OpProbe {
            name: "concat",
            inputs: |rng| {
                let n = dim(rng);
                let (a, b, c) = (dim(rng), dim(rng), dim(rng));
                vec![
                    random(rng, &[a, n]),
                    random(rng, &[b, n]),
                    random(rng, &[c, n]),
                    random(rng, &[a + b + c, n]),
                ]
            },
            loss: |t, v| {
                let y = t.concat(&v[..3])?;
                weighted(t, y, v[3])
            },
        },
        OpProbe {
            name: "slice",
            inputs: |rng| {
                let rows = dim(rng) + 2;
                let cols = dim(rng);
                vec![random(rng, &[rows, cols]), random(rng, &[rows - 2, cols])]
            },
            loss: |t, v| {
                let rows = t.shape(v[1])[0];
                let y = t.slice(v[0], 1, rows)?;
                weighted(t, y, v[1])
            },
        },
        OpProbe {
            name: "reshape",
            inputs: |rng| {
                let (a, b) = (dim(rng), dim(rng));
                vec![random(rng, &[a, b]), random(rng, &[a * b])]
            },
            loss: |t, v| {
                let n = t.value(v[0]).len();
                let y = t.reshape(v[0], &[n])?;
                weighted(t, y, v[1])
            },
        },
        OpProbe {
            name: "embedding",
            inputs: |rng| {
                let (rows, width) = (dim(rng) + 1, dim(rng));
                vec![random(rng, &[rows, width]), random(rng, &[3, width])]
            },
            loss: |t, v| {
                let last = t.shape(v[0])[0] - 1;
                let y = t.embedding(v[0], &[last, 0, last])?;
                weighted(t, y, v[1])
            },
        },
        OpProbe {
            name: "pick",
            inputs: |rng| {
                let n = dim(rng) + 1;
                vec![random(rng, &[n]), random(rng, &[4])]
            },
            loss: |t, v| {
                let last = t.shape(v[0])[0] - 1;
                let y = t.pick(v[0], &[last, 0, last, 1])?;
                weighted(t, y, v[1])
            },
        },
        OpProbe {
            name: "scatter_add",
            inputs: |rng| vec![random(rng, &[4]), random(rng, &[3])],
            loss: |t, v| {
                let y = t.scatter_add(v[0], &[2, 0, 2, 2], 3)?;
                weighted(t, y, v[1])
            },
        },
        OpProbe {
            name: "softmax",
            inputs: |rng| {
                let n = dim(rng) + 1;
                vec![random(rng, &[n]), random(rng, &[n])]
            },
            loss: |t, v| {
                let y = t.softmax(v[0])?;
                weighted(t, y, v[1])
            },
        },
        OpProbe {
            name: "sum",
            inputs: |rng| {
                let s = [dim(rng), dim(rng)];
                vec![random(rng, &s), random(rng, &[1])]
            },
            loss: |t, v| {
                let y = t.sum(v[0])?;
                weighted(t, y, v[1])
            },
        },
        OpProbe {
            name: "scale",
            inputs: unary_inputs,
            loss: |t, v| {
                let y = t.scale(v[0], -0.75)?;
                weighted(t, y, v[1])
            },
        },
    ];
    for kind in UnaryKind::ALL {
        let name = match kind {
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Tanh => "tanh",
            UnaryKind::Exp => "exp",
            UnaryKind::Log => "log",
            UnaryKind::Neg => "neg",
        };
        let inputs: fn(&mut dyn rand::RngCore) -> Vec<Tensor> = if kind == UnaryKind::Log {
            |rng| {
                let s = [dim(rng), dim(rng)];
                vec![positive(rng, &s), random(rng, &s)]
            }
        } else {
            unary_inputs
        };
        probes.push(OpProbe {
            name,
            inputs,
            loss: unary_probe(kind),
        });
    }
    probes
}
