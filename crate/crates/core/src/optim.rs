//! Derivative-free minimization with the Nelder-Mead simplex method, used
//! by the intensity-based registration baseline.

/// Stopping rules: iteration cap and the simplex collapse size.
#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    /// Terminate once every vertex lies within this Euclidean distance of
    /// the best vertex.
    pub diameter_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

const REFLECTION: f64 = 1.0;
const EXPANSION: f64 = 2.0;
const CONTRACTION: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimizes `f` starting from `x0`, with the initial simplex spanned by
/// displacing each coordinate by its entry in `steps`.
pub fn minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    steps: &[f64],
    opts: &SimplexOptions,
) -> SimplexOutcome {
    let dim = x0.len();
    assert_eq!(steps.len(), dim, "one step per coordinate");
    assert!(dim > 0, "cannot optimize zero parameters");
    assert!(
        steps.iter().all(|&s| s != 0.0 && s.is_finite()),
        "initial simplex steps must be nonzero"
    );

    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        f(x)
    };

    // vertices[i] = (point, value); simplex of dim+1 points
    let mut vertices: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let v0 = eval(x0);
    vertices.push((x0.to_vec(), v0));
    for i in 0..dim {
        let mut p = x0.to_vec();
        p[i] += steps[i];
        let v = eval(&p);
        vertices.push((p, v));
    }

    let mut iterations = 0usize;
    while iterations < opts.max_iterations {
        // order best -> worst; stable so ties keep insertion order
        vertices.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));

        let diameter = vertices[1..]
            .iter()
            .map(|(p, _)| dist(p, &vertices[0].0))
            .fold(0.0f64, f64::max);
        if diameter < opts.diameter_tol {
            break;
        }
        iterations += 1;

        // centroid of all but the worst vertex
        let mut centroid = vec![0.0f64; dim];
        for (p, _) in &vertices[..dim] {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c += x;
            }
        }
        for c in &mut centroid {
            *c /= dim as f64;
        }

        let worst = vertices[dim].clone();
        let second_worst = vertices[dim - 1].1;
        let best = vertices[0].1;

        let reflected = blend(&centroid, &worst.0, REFLECTION);
        let fr = eval(&reflected);

        if fr < best {
            let expanded = blend(&centroid, &worst.0, EXPANSION);
            let fe = eval(&expanded);
            vertices[dim] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
        } else if fr < second_worst {
            vertices[dim] = (reflected, fr);
        } else {
            let contracted = if fr < worst.1 {
                blend(&centroid, &worst.0, CONTRACTION) // outside
            } else {
                blend(&centroid, &worst.0, -CONTRACTION) // inside
            };
            let fc = eval(&contracted);
            if fc < fr.min(worst.1) {
                vertices[dim] = (contracted, fc);
            } else {
                // shrink toward the best vertex
                let anchor = vertices[0].0.clone();
                for (p, v) in &mut vertices[1..] {
                    for (x, a) in p.iter_mut().zip(&anchor) {
                        *x = a + SHRINK * (*x - a);
                    }
                    *v = eval(p);
                }
            }
        }
    }

    vertices.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    let (x, value) = vertices.swap_remove(0);
    SimplexOutcome {
        x,
        value,
        iterations,
        evaluations,
    }
}

/// `centroid + t * (centroid - worst)`: reflection for t>0, inside
/// contraction for t<0.
fn blend(centroid: &[f64], worst: &[f64], t: f64) -> Vec<f64> {
    centroid
        .iter()
        .zip(worst)
        .map(|(c, w)| c + t * (c - w))
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
