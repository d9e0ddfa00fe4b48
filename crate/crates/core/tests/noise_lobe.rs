use spin_echo::noise::{
    average_maps, directional_noise_map, lobe_full_width, noise_into_readout_mode, residual_population,
    DetectionMode, NoiseGrid, NoiseMap, NoiseSource,
};
use spin_echo::{sample_atoms, BeamGeometry, EnsembleSpec};

fn geom() -> BeamGeometry {
    BeamGeometry::degenerate_wavelength(795e-9, 1.1f64.to_radians(), 1.1f64.to_radians()).unwrap()
}

fn map(n: usize, waist: f64, eps: f64, seed: u64, points: usize) -> NoiseMap {
    let spec = EnsembleSpec::rb87(n, 15e-6, [1e-3, 1e-3, 300e-6], waist).unwrap();
    let atoms = sample_atoms(&spec, seed).unwrap();
    let span = 2.5 * lobe_full_width(795e-9, waist);
    let grid = NoiseGrid {
        center: None,
        half_span: (span, span),
        n: (points, points),
    };
    directional_noise_map(&atoms, &geom(), eps, &grid).unwrap()
}

#[test]
fn intensity_is_linear_in_residual_population() {
    let base = map(20_000, 100e-6, 0.01, 3, 21);
    for eps in [0.02, 0.04] {
        let m = map(20_000, 100e-6, eps, 3, 21);
        let (i0, i1) = (base.argmax(), m.argmax());
        assert_eq!(i0, i1);
        let ratio = m.at(i1.0, i1.1) / base.at(i0.0, i0.1);
        let rho = residual_population(eps) * (1.0 - residual_population(eps))
            / (residual_population(0.01) * (1.0 - residual_population(0.01)));
        assert!((ratio / rho - 1.0).abs() < 1e-3, "{ratio} vs {rho}");
    }
}

#[test]
fn lobe_width_independent_of_epsilon_and_atom_number() {
    let w = |n, eps, seed| map(n, 100e-6, eps, seed, 41).lobe_shape().unwrap().full_width;
    let a = w(200_000, 0.01, 5);
    let b = w(200_000, 0.04, 5);
    let c = w(400_000, 0.01, 6);
    for (x, y) in [(a, b), (a, c)] {
        assert!((x.0 / y.0 - 1.0).abs() < 0.05, "{x:?} {y:?}");
        assert!((x.1 / y.1 - 1.0).abs() < 0.05, "{x:?} {y:?}");
    }
}

#[test]
fn map_is_mirror_symmetric_about_lobe() {
    let m = average_maps(&(0..4).map(|s| map(20_000, 100e-6, 0.03, 40 + s, 41)).collect::<Vec<_>>()).unwrap();
    let (ix, iy) = m.argmax();
    assert_eq!((ix, iy), (20, 20));
    let peak = m.at(ix, iy);
    for d in 1..8 {
        let l = m.at(ix - d, iy);
        let r = m.at(ix + d, iy);
        let tol = 0.05 * peak;
        assert!((l - r).abs() < tol, "d={d}: {l} vs {r}");
    }
}

#[test]
fn readout_noise_is_linear_in_epsilon_at_reference_geometry() {
    let g = BeamGeometry::degenerate_wavelength(795e-9, 1.1f64.to_radians(), 2.1f64.to_radians()).unwrap();
    let spec = EnsembleSpec::rb87(200_000, 15e-6, [500e-6, 500e-6, 500e-6], 102e-6).unwrap();
    let det = DetectionMode::readout(&g, 102e-6, 1.0).unwrap();
    let at = |epsilon| noise_into_readout_mode(NoiseSource::Params { geom: &g, spec: &spec, epsilon }, &det).unwrap();
    let base = at(0.01);
    for eps in [0.02, 0.04] {
        let r = at(eps) / base / (eps / 0.01);
        assert!((r - 1.0).abs() < 0.05, "eps={eps}: {r}");
    }
}
