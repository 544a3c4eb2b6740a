//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use snakepoly::diffusion::RealImage;
use snakepoly::grid::Grid;
use snakepoly::nn::{Denoiser, DenoiserConfig, Tape, Tensor};

/// Naive structural classification written independently of the library:
/// `(kind, branching, cycle, multiple_components, length)` with kind one of
/// "EMPTY", "VALID_SNAKE", "MALFORMED".
pub fn naive_classify(g: &Grid) -> (&'static str, bool, bool, bool, usize) {
    let (h, w) = g.dims();
    let alive = |r: isize, c: isize| r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && g.get(r as usize, c as usize);
    let cells: Vec<(isize, isize)> =
        (0..h as isize).flat_map(|r| (0..w as isize).map(move |c| (r, c))).filter(|&(r, c)| alive(r, c)).collect();
    if cells.is_empty() {
        return ("EMPTY", false, false, false, 0);
    }
    let deg = |(r, c): (isize, isize)| [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)].iter().filter(|&&(a, b)| alive(a, b)).count();
    let branching = cells.iter().any(|&p| deg(p) >= 3);
    // Label components by repeated relaxation (no queue, unlike the library).
    let mut label: Vec<usize> = (0..cells.len()).collect();
    let adjacent = |a: (isize, isize), b: (isize, isize)| (a.0 - b.0).abs() + (a.1 - b.1).abs() == 1;
    loop {
        let mut changed = false;
        for i in 0..cells.len() {
            for j in 0..cells.len() {
                if adjacent(cells[i], cells[j]) && label[j] < label[i] {
                    label[i] = label[j];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut roots: Vec<usize> = label.clone();
    roots.sort_unstable();
    roots.dedup();
    let multiple = roots.len() > 1;
    // A component contains a cycle iff its edge count reaches its vertex count.
    let cycle = roots.iter().any(|&root| {
        let members: Vec<usize> = (0..cells.len()).filter(|&i| label[i] == root).collect();
        let edges: usize = members.iter().map(|&i| deg(cells[i])).sum::<usize>() / 2;
        edges >= members.len()
    });
    let kind = if branching || cycle || multiple { "MALFORMED" } else { "VALID_SNAKE" };
    (kind, branching, cycle, multiple, cells.len())
}

pub fn random_grid(rng: &mut ChaCha8Rng, max_side: usize) -> Grid {
    let h = rng.gen_range(1..=max_side);
    let w = rng.gen_range(1..=max_side);
    let p: f64 = rng.gen_range(0.1..0.9);
    let cells = (0..h * w).map(|_| rng.gen_bool(p)).collect();
    Grid::from_cells(h, w, cells).unwrap()
}

pub fn random_image(h: usize, w: usize, seed: u64) -> RealImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RealImage::from_values(h, w, (0..h * w).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Outcome of comparing backpropagated gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub checked: usize,
    pub worst_relative: f64,
    pub worst_name: String,
    pub failures: usize,
}

/// Tiny network whose output head is randomised so gradients reach every parameter.
pub fn gradcheck_model() -> Denoiser {
    let mut model = Denoiser::new(DenoiserConfig::tiny(), 100, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let names: Vec<String> = model.params().names().map(str::to_string).collect();
    for name in names {
        let t = model.params_mut().get_mut(&name).unwrap();
        if name.starts_with("out.conv") || name.ends_with(".bias") || name.ends_with(".beta") {
            for v in &mut t.data {
                *v = 0.3 * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    model
}

/// Checks d(Σ r ⊙ ε_θ(x, t))/dθ for every parameter tensor; `stride` > 1 checks every
/// `stride`-th entry of each tensor (always including the first and last).
/// Passing entries satisfy |a − n| ≤ tol · max(|a|, |n|) or both are below `floor`.
pub fn gradient_check(model: &mut Denoiser, stride: usize, tol: f64, floor: f64) -> GradCheck {
    let x = random_image(8, 8, 5);
    let t = 37;
    let weights = random_image(8, 8, 6);
    let r = Tensor::from_vec(&[1, 8, 8], weights.values().to_vec());
    let objective = |m: &Denoiser| -> f64 {
        let out = m.predict_noise(&x, t).unwrap();
        out.values().iter().zip(weights.values()).map(|(a, b)| a * b).sum()
    };
    let mut grads: Vec<Tensor> = model.params().tensors().iter().map(|p| Tensor::zeros(&p.shape)).collect();
    {
        let mut tape = Tape::new(model.params().tensors());
        let trace = model.forward(&mut tape, &x, t).unwrap();
        tape.backward(trace.output, r, &mut grads);
    }
    let names: Vec<String> = model.params().names().map(str::to_string).collect();
    let mut report = GradCheck { checked: 0, worst_relative: 0.0, worst_name: String::new(), failures: 0 };
    let h = 1e-5;
    for (pi, name) in names.iter().enumerate() {
        let n = model.params().tensors()[pi].len();
        let mut idx: Vec<usize> = (0..n).step_by(stride.max(1)).collect();
        if idx.last() != Some(&(n - 1)) {
            idx.push(n - 1);
        }
        for i in idx {
            let orig = model.params().tensors()[pi].data[i];
            model.params_mut().tensors_mut()[pi].data[i] = orig + h;
            let up = objective(model);
            model.params_mut().tensors_mut()[pi].data[i] = orig - h;
            let down = objective(model);
            model.params_mut().tensors_mut()[pi].data[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[pi].data[i];
            let scale = analytic.abs().max(numeric.abs());
            let diff = (analytic - numeric).abs();
            report.checked += 1;
            if scale > floor {
                let rel = diff / scale;
                if rel > report.worst_relative {
                    report.worst_relative = rel;
                    report.worst_name = format!("{name}[{i}]");
                }
                if rel > tol {
                    report.failures += 1;
                }
            } else if diff > floor {
                report.failures += 1;
            }
        }
    }
    report
}
