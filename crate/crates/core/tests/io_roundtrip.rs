use mvspatial::io::{
    ingest_csv, ingest_reader, sha256_hex, write_dataset, write_dataset_to, IngestMode, Projection, Stamp,
};
use mvspatial::model::SpatialDataset;
use mvspatial::simulation::{builtin_scenario, simulate_dataset};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn dataset_strategy() -> impl Strategy<Value = SpatialDataset> {
    (1usize..6, 1usize..4, 0usize..3, 1usize..4).prop_flat_map(|(n, p, q, t)| {
        (
            prop::collection::vec(prop::array::uniform2(-1e3f64..1e3), n),
            prop::collection::vec(-1e6f64..1e6, n * q),
            prop::collection::vec(prop::num::f64::NORMAL, n * p * t),
        )
            .prop_map(move |(sites, cov, values)| {
                SpatialDataset::new(
                    (0..n).map(|k| format!("site{k}")).collect(),
                    sites,
                    (0..q).map(|c| format!("cov{c}")).collect(),
                    DMatrix::from_row_slice(n, q, &cov),
                    (0..p).map(|i| format!("comp{i}")).collect(),
                    values
                        .chunks(n * p)
                        .map(|v| DMatrix::from_column_slice(n, p, v))
                        .collect(),
                )
                .unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn written_datasets_read_back_bit_identical(data in dataset_strategy()) {
        let mut buf = Vec::new();
        let stamp = Stamp { config_sha256: sha256_hex(b"x"), seed: 9 };
        write_dataset_to(&mut buf, &data, Some(&stamp)).unwrap();
        let (back, proj) = ingest_reader(buf.as_slice(), IngestMode::Training, Projection::Planar).unwrap();
        prop_assert_eq!(proj, Projection::Planar);
        prop_assert_eq!(back, data);
    }
}

#[test]
fn simulated_scenario_survives_the_file_system() {
    let sim = simulate_dataset(&builtin_scenario("sec6-dataset2-desk").unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    write_dataset(&path, &sim.dataset, None).unwrap();
    let (back, _) = ingest_csv(&path, IngestMode::Training, Projection::Planar).unwrap();
    assert_eq!(back, sim.dataset);
}

#[test]
fn rows_may_arrive_in_any_order() {
    let text = "site_id,x,y,replicate,component,value\n\
                b,1,0,2,v,4\n\
                a,0,0,1,u,1\n\
                b,1,0,1,u,2\n\
                a,0,0,2,v,3\n\
                a,0,0,1,v,5\n\
                b,1,0,1,v,6\n\
                a,0,0,2,u,7\n\
                b,1,0,2,u,8\n";
    let (d, _) = ingest_reader(text.as_bytes(), IngestMode::Training, Projection::Planar).unwrap();
    assert_eq!(d.site_ids, ["b", "a"]);
    assert_eq!(d.component_names, ["v", "u"]);
    assert_eq!(d.responses[0], DMatrix::from_row_slice(2, 2, &[6.0, 2.0, 5.0, 1.0]));
    assert_eq!(d.responses[1], DMatrix::from_row_slice(2, 2, &[4.0, 8.0, 3.0, 7.0]));
}

#[test]
fn malformed_rows_name_the_line() {
    let cases = [
        ("site_id,x,y,replicate,component,value\na,0,0,1,u,oops\n", "line 2"),
        ("site_id,x,y,replicate,component,value\na,0,0,1.5,u,1\n", "line 2"),
        ("site_id,x,replicate,component,value\na,0,1,u,1\n", "header"),
        (
            "site_id,x,y,replicate,component,value\na,0,0,1,u,1\na,0,0,1,u,2\n",
            "line 3",
        ),
    ];
    for (text, needle) in cases {
        let err = ingest_reader(text.as_bytes(), IngestMode::Training, Projection::Planar).unwrap_err();
        assert!(err.to_string().contains(needle), "{err} lacks {needle}");
    }
}

#[test]
fn missing_file_is_reported_with_its_path() {
    let err = ingest_csv(
        "/nonexistent/data.csv".as_ref(),
        IngestMode::Training,
        Projection::Planar,
    )
    .unwrap_err();
    assert!(err.to_string().contains("/nonexistent/data.csv"));
}
