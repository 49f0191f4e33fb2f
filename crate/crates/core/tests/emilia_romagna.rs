use std::path::PathBuf;

use mkepi::observables::{compartment_totals, region_totals};
use mkepi::scenario::{preset_emilia_romagna, read_cities, read_mobility, UnitScales, ER_CITIES, ER_MOBILITY};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/emilia_romagna")
}

#[test]
fn city_table_matches_the_published_rows() {
    let cities = read_cities(&data_dir().join(ER_CITIES)).unwrap();
    assert_eq!(cities.len(), 9);
    let pc = &cities[0];
    assert_eq!(pc.name, "Piacenza");
    assert_eq!((pc.radius, pc.population, pc.infected, pc.exposed), (4.5, 2.87e5, 174.0, 696.0));
    assert_eq!(pc.commuter_fraction, 0.0145);
    let fe = cities.iter().find(|c| c.name == "Ferrara").unwrap();
    assert_eq!(fe.commuter_fraction, 0.068);
    assert_eq!(fe.infected, 0.0);
    // sum of the population column
    let total: f64 = cities.iter().map(|c| c.population).sum();
    assert!((total - 4.474e6).abs() < 1e-6 * 4.474e6, "{total}");
    // exposed are four times the infected in every row
    assert!(cities.iter().all(|c| c.exposed == 4.0 * c.infected));
}

#[test]
fn mobility_matrix_gives_the_commuter_percentages() {
    let m = read_mobility(&data_dir().join(ER_MOBILITY)).unwrap();
    assert_eq!(m.provinces.len(), 9);
    let fe = m.index("Ferrara").unwrap();
    let bo = m.index("Bologna").unwrap();
    assert_eq!(m.counts[fe][bo], 16865.0);
    assert_eq!(m.outgoing(fe), 2682.0 + 16865.0 + 2610.0);
    // Piacenza: 4178 / 2.87e5 = 1.456 %, listed as 1.45 %
    let pc = m.index("Piacenza").unwrap();
    assert!((100.0 * m.outgoing_fraction(pc, 2.87e5) - 1.45).abs() < 0.01);
}

#[test]
fn preset_initial_state_reproduces_the_table() {
    let cfg = preset_emilia_romagna(&data_dir()).unwrap();
    let scn = cfg.build(&data_dir()).unwrap();
    let u = UnitScales::EMILIA_ROMAGNA;
    let sys = &scn.system;
    let tot = compartment_totals(&sys.mesh, &sys.set, &scn.state, &scn.urban).unwrap();
    let persons = u.unscale_persons(tot.population());
    assert!((persons - 4.474e6).abs() < 1e-9 * 4.474e6, "{persons}");
    // S, E, I, R
    assert!((u.unscale_persons(tot.total(2)) - 285.0).abs() < 1e-9 * 285.0);
    assert!((u.unscale_persons(tot.total(1)) - 1140.0).abs() < 1e-9 * 1140.0);
    assert_eq!(tot.total(3), 0.0);

    // one region per province, partitioning the mesh
    assert_eq!(scn.regions.len(), 9);
    let mut seen = vec![0usize; sys.mesh.n_cells()];
    for r in &scn.regions {
        for &k in &r.cells {
            seen[k] += 1;
        }
    }
    assert!(seen.iter().all(|&s| s == 1));

    // commuters are 6.8 % of the Ferrara population
    let fe = scn.regions.iter().find(|r| r.name == "Ferrara").unwrap();
    let t = region_totals(&sys.mesh, &sys.set, &scn.state, &scn.urban, &fe.cells).unwrap();
    let frac = t.commuter_population() / t.population();
    assert!((frac - 0.068).abs() < 1e-9, "{frac}");

    // infected do not travel
    let nc = sys.fields.kind.count();
    assert!((0..sys.mesh.n_cells()).all(|k| sys.fields.lambda[k * nc + 2] == 0.0));
}
