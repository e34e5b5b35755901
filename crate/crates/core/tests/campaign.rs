use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use exant::campaign::*;
use exant::ea_model::{GainSpec, MarkSpec, PeakDirection, PlantedScatterer};
use exant::estimator::GridSpec;
use exant::geometry::{FrameSpec, Point2};
use exant::waveform::{los_vector, NoiseSpec};

fn los_only(label: OnBodyLabel) -> CampaignConfig {
    let mut c = CampaignConfig::scaled_down(label);
    c.ea.mean_count = 0.0;
    c.noise.variance = 0.0;
    c
}

#[test]
fn shipped_configs_match_presets() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for label in OnBodyLabel::ALL {
        let loaded = CampaignConfig::load(&dir.join(format!("preset_{}.toml", label.token()))).unwrap();
        assert_eq!(loaded, CampaignConfig::preset(label), "preset {label}");
    }
    let quick = CampaignConfig::load(&dir.join("quick.toml")).unwrap();
    assert_eq!(quick, CampaignConfig::scaled_down(OnBodyLabel::Reference));
}

#[test]
fn empty_model_snapshots_are_scaled_los() {
    let c = los_only(OnBodyLabel::Center);
    let (set, truth) = run_simulation(&c).unwrap();
    assert!(truth.points.is_empty());
    for (m, snap) in set.snapshots.iter().enumerate() {
        let expected = los_vector(&c.pulse, c.frame.origin, snap.anchor).unwrap().scaled(truth.los_gains[m]);
        assert_eq!(snap.signal, expected);
    }
}

#[test]
fn simulation_is_reproducible_and_seed_dependent() {
    let c = CampaignConfig::scaled_down(OnBodyLabel::Left).with_seed(11);
    let (a, ta) = run_simulation(&c).unwrap();
    let (b, tb) = run_simulation(&c).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    let (other, _) = run_simulation(&c.clone().with_seed(12)).unwrap();
    assert_ne!(a, other);
}

#[test]
fn default_config_runs_with_energy_in_every_snapshot() {
    let c = CampaignConfig::preset(OnBodyLabel::Reference);
    let (set, _) = run_simulation(&c).unwrap();
    assert_eq!(set.len(), 200);
    assert_eq!(set.spec.carrier_hz, 6.95e9);
    assert!(set.snapshots.iter().all(|s| s.signal.norm_sqr() > 0.0));
}

#[test]
fn los_only_noise_free_report() {
    let mut c = los_only(OnBodyLabel::Reference);
    c.ea.los_gain = GainSpec::default();
    let (set, _) = run_simulation(&c).unwrap();
    let report = run_calibration(&set, &c, None).unwrap();
    assert_eq!(report.n_scatterers(), 0);
    assert!(report.shape.is_none());
    assert!(report.strongest.is_empty());
    assert_eq!(report.sectors.len(), 1);
    assert!(report.par.los_db.abs() < 1e-9, "PAR {}", report.par.los_db);
    let amr = report.amr.as_ref().unwrap();
    assert!(amr.los_db <= 1e-12 && amr.los_db > -1e-9);
}

#[test]
fn planted_ordering_is_reported() {
    let mut c = CampaignConfig::scaled_down(OnBodyLabel::Reference).with_seed(3);
    c.ea.marks = MarkSpec {
        angular_width: 1e4,
        peak: PeakDirection::FromMean,
        ..c.ea.marks
    };
    c.ea.los_gain = GainSpec::default();
    c.noise = NoiseSpec::from_snr_db(1.0, 30.0, c.noise.seed).unwrap();
    c.planted = vec![
        PlantedScatterer { position: Point2::new(-0.24, 0.16), base_magnitude: 0.6 },
        PlantedScatterer { position: Point2::new(0.2, 0.28), base_magnitude: 0.4 },
        PlantedScatterer { position: Point2::new(0.08, -0.32), base_magnitude: 0.2 },
    ];
    let (_, report) = run_campaign(&c, None).unwrap();
    let nearest = |p: Point2| {
        (0..report.n_scatterers())
            .min_by(|&a, &b| {
                report.calibration.q_hat[a]
                    .distance(p)
                    .total_cmp(&report.calibration.q_hat[b].distance(p))
            })
            .unwrap()
    };
    let bars: Vec<f64> = c.planted.iter().map(|s| report.beta_bar[nearest(s.position)]).collect();
    assert!(bars[0] > bars[1] && bars[1] > bars[2], "{bars:?}");
    assert_eq!(report.strongest, vec![nearest(c.planted[0].position), nearest(c.planted[1].position)]);
    assert_eq!(report.sectors.len(), 3);
    assert_eq!(report.sectors[1].scatterer, Some(report.strongest[0]));
}

#[test]
fn amr_requires_a_label_zero_reference() {
    let c = CampaignConfig::scaled_down(OnBodyLabel::Center).with_seed(2);
    let (set, _) = run_simulation(&c).unwrap();
    let report = run_calibration(&set, &c, None).unwrap();
    assert!(report.amr.is_none());
    assert!(matches!(compute_amr(&report, None), Err(CampaignError::MissingReference(_))));
    assert!(matches!(
        run_calibration(&set, &c, Some(&report)),
        Err(CampaignError::MissingReference(_))
    ));

    let rc = CampaignConfig::scaled_down(OnBodyLabel::Reference).with_seed(2);
    let (rset, _) = run_simulation(&rc).unwrap();
    let reference = run_calibration(&rset, &rc, None).unwrap();
    let own = reference.amr.as_ref().unwrap();
    assert!(own.los_db <= 0.0);
    assert_eq!(own.reference_max, reference.los_series().unwrap().max().unwrap());

    let with_ref = run_calibration(&set, &c, Some(&reference)).unwrap();
    let amr = with_ref.amr.unwrap();
    assert_eq!(amr.scatterers_db.len(), with_ref.beta_bar.len());
    let expected = 20.0 * (with_ref.alpha_bar / own.reference_max).log10();
    assert!((amr.los_db - expected).abs() < 1e-12);
}

#[test]
fn rotated_frame_keeps_sector_curves() {
    let base = los_only(OnBodyLabel::Center);
    let mut rotated = base.clone();
    rotated.frame = FrameSpec::new(Point2::new(1.5, -0.5), 0.7);
    rotated.grid = base.grid.translated(Point2::new(1.5, -0.5));
    let curve = |c: &CampaignConfig| {
        let (set, _) = run_simulation(c).unwrap();
        run_calibration(&set, c, None).unwrap().sectors[0].stats.clone()
    };
    let a = curve(&base);
    let b = curve(&rotated);
    for (x, y) in a.means.iter().zip(&b.means) {
        match (x, y) {
            (Some(x), Some(y)) => assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-12), "{x} vs {y}"),
            (None, None) => {}
            _ => panic!("sector occupancy differs"),
        }
    }

    // turning the body by k sectors shifts the curve by k sectors
    let mut turned = base.clone();
    turned.n_snapshots = 72;
    let mut shifted = turned.clone();
    let k = 5;
    shifted.ea.los_gain.notch_direction += k as f64 * TAU / turned.n_sectors as f64;
    let a = curve(&turned);
    let b = curve(&shifted);
    let n = a.n_sectors;
    let argmin_a = a.argmin().unwrap();
    let argmin_b = b.argmin().unwrap();
    let shift = (argmin_b + n - argmin_a) % n;
    assert!(shift.abs_diff(k) <= 1, "shift {shift}");
}

#[test]
fn report_export_layout_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let c = CampaignConfig::scaled_down(OnBodyLabel::Center).with_seed(4);
    let (_, report) = run_campaign(&c, None).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    export_report(&report, &a).unwrap();
    export_report(&report, &b).unwrap();
    let names = ["scatterers.csv", "amplitudes.csv", "sectors.csv", "summary.csv", "ellipse.csv", "report.json"];
    for name in names {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let scatterers = fs::read_to_string(a.join("scatterers.csv")).unwrap();
    assert_eq!(scatterers.lines().count(), 1 + report.n_scatterers());
    let amplitudes = fs::read_to_string(a.join("amplitudes.csv")).unwrap();
    assert_eq!(amplitudes.lines().count(), 1 + c.n_snapshots);
    let sectors = fs::read_to_string(a.join("sectors.csv")).unwrap();
    assert_eq!(sectors.lines().count(), 1 + c.n_sectors * report.sectors.len());
    // 32 snapshots cannot fill 36 sectors
    assert!(sectors.contains(",0,NA,NA"));
    let ellipse = fs::read_to_string(a.join("ellipse.csv")).unwrap();
    assert!(ellipse.starts_with("# scale_factor=2\n"));
    let back = load_report(&a.join("report.json")).unwrap();
    assert_eq!(back, report);
}

#[test]
fn exported_scatterer_table_has_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = los_only(OnBodyLabel::Reference);
    let (set, _) = run_simulation(&c).unwrap();
    let empty = run_calibration(&set, &c, None).unwrap();
    export_report(&empty, dir.path()).unwrap();
    assert_eq!(
        fs::read_to_string(dir.path().join("scatterers.csv")).unwrap(),
        "index,x,y,score,beta_bar,par_db,amr_db\n"
    );
    assert_eq!(fs::read_to_string(dir.path().join("ellipse.csv")).unwrap(), "# scale_factor=2\nx,y\n");

    c.ea.los_gain = GainSpec::default();
    c.ea.marks.peak = PeakDirection::FromMean;
    c.ea.marks.angular_width = 1e4;
    c.grid = GridSpec::centered(Point2::ORIGIN, 0.8, 0.04);
    let nodes = c.grid.nodes();
    let picks = [(-0.24, 0.2), (0.2, 0.24), (0.28, -0.2), (-0.2, -0.28), (0.0, 0.32)];
    c.planted = picks
        .iter()
        .map(|&(x, y)| PlantedScatterer {
            position: *nodes.iter().min_by(|a, b| a.distance(Point2::new(x, y)).total_cmp(&b.distance(Point2::new(x, y)))).unwrap(),
            base_magnitude: 0.3,
        })
        .collect();
    // noise-free residue of the LOS fit would otherwise keep the greedy loop going
    c.stopping.max_scatterers = 5;
    let (set, _) = run_simulation(&c).unwrap();
    let report = run_calibration(&set, &c, None).unwrap();
    assert_eq!(report.n_scatterers(), 5);
    let out = dir.path().join("five");
    export_report(&report, &out).unwrap();
    assert_eq!(fs::read_to_string(out.join("scatterers.csv")).unwrap().lines().count(), 6);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = CampaignConfig::scaled_down(OnBodyLabel::Reference);
    c.n_snapshots = 0;
    assert!(matches!(run_simulation(&c), Err(CampaignError::Config(_))));
    let mut c = CampaignConfig::scaled_down(OnBodyLabel::Reference);
    c.pulse.rolloff = 2.0;
    assert!(matches!(run_simulation(&c), Err(CampaignError::Config(_))));
    let mut c = CampaignConfig::scaled_down(OnBodyLabel::Reference);
    c.anchor_radius = -1.0;
    assert!(matches!(run_simulation(&c), Err(CampaignError::Config(_))));
}
