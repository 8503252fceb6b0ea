use reglang::markov::parity_shift_family;
use reglang::shift::*;
fn main() {
    let family = parity_shift_family(&[0.2]).unwrap();
    for delta in [0.25, 0.5, 0.85] {
        let q = family.perturbed(delta).unwrap();
        let t0 = std::time::Instant::now();
        let b = exact_tv_enumeration(family.base(), &q, 400).unwrap();
        println!("delta {delta}: lower {:.17e} upper {:.17e} width {:.3e} ({:?})",
            b.lower, b.upper, b.upper - b.lower, t0.elapsed());
        let est = estimate_tv_strings_mc(family.base(), &q, 10000, 1234).unwrap();
        println!("  mc(10k) {} +- {}", est.mean, est.std_error);
    }
    let q85 = family.perturbed(0.85).unwrap();
    let comp = bound_comp_estimate(family.base(), &q85, 10000, 0.0, 777).unwrap();
    println!("g_comp(0.85, n=10000, seed=777) = {comp:.17e}");
}
