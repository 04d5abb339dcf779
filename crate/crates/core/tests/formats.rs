//! External file formats and the shipped fixtures.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use msnp::data::{load_sequence_dataset, parse_trust_graph, sequence_to_csv, synthetic_sequence};
use msnp::predictor::{parse_rules, read_records_csv, write_records_csv, PredictionModel};
use msnp::trust::{PscList, ReputationData};
use msnp::{ContextValue, Ontology, PeerId, RatingLevel, SemanticType, SimConfig};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

#[test]
fn shipped_sequence_fixture_matches_generator() {
    let text = std::fs::read_to_string(fixture("sequence_200.csv")).unwrap();
    assert_eq!(text, sequence_to_csv(&synthetic_sequence(200, 42)));
    let records = load_sequence_dataset(&fixture("sequence_200.csv")).unwrap();
    assert_eq!(records.len(), 200);
    let hifi = records.iter().find(|r| r.query.qid == "HiFi").unwrap();
    assert_eq!(
        hifi.contexts,
        BTreeSet::from([
            ContextValue::new("location", "livingroom"),
            ContextValue::new("action", "sitting")
        ])
    );
}

#[test]
fn shipped_sim_configs_match_defaults() {
    assert_eq!(
        SimConfig::load(&fixture("default.sim")).unwrap(),
        SimConfig::default()
    );
    assert_eq!(
        SimConfig::load(&fixture("steady.sim")).unwrap(),
        SimConfig::steady_default()
    );
}

#[test]
fn shipped_graph_is_clean() {
    let load = parse_trust_graph(&std::fs::read_to_string(fixture("graph.txt")).unwrap()).unwrap();
    assert_eq!((load.malformed, load.duplicates), (0, 0));
    assert!(load.graph.nodes().len() >= 100);
}

#[test]
fn ontology_file() {
    let o = Ontology::parse("Media\t\nPhoto\tMedia\nVideo\tMedia\nPortrait\tPhoto\n").unwrap();
    let t = SemanticType::new;
    assert!(o.type_matches(&t("Media"), &t("Portrait")).unwrap());
    assert!(!o.type_matches(&t("Photo"), &t("Media")).unwrap());
    assert!(Ontology::parse("A\tB\nB\tA\n").is_err());
    assert!(Ontology::parse("A\t\nB\tMissing\n").is_err());
}

#[test]
fn records_csv_and_rules() {
    let csv =
        "qid,contexts\nQ1,loc=home;time=evening\nQ2,loc=office;time=morning\nQ1,loc=home;time=morning\n";
    let records = read_records_csv(csv.as_bytes()).unwrap();
    assert_eq!(records.len(), 3);
    let mut out = Vec::new();
    write_records_csv(&records, &mut out).unwrap();
    assert_eq!(read_records_csv(out.as_slice()).unwrap(), records);

    let rules = parse_rules("importance = loc,2\nfilter = Q2:time\noverride = loc=beach => Q3\n").unwrap();
    let model = PredictionModel::new(records).with_rules(rules);
    let current = BTreeSet::from([
        ContextValue::new("loc", "home"),
        ContextValue::new("time", "morning"),
    ]);
    assert_eq!(model.predict(&current).unwrap().top().unwrap().qid, "Q1");
    let beach = BTreeSet::from([ContextValue::new("loc", "beach")]);
    assert_eq!(model.predict(&beach).unwrap().top().unwrap().qid, "Q3");
}

#[test]
fn rd_and_psc_json() {
    let rd_text = r#"{
        "owner": "alice",
        "spr": [{"provider": "cafe", "rates": [{"sname": "espresso", "stype": "Food", "rate": "Master"}]}],
        "rr": [{"stype": "Food", "ids": ["bob"]}],
        "ir": [{"provider": "cafe", "sname": "espresso", "stype": "Food", "timestamp": 3}]
    }"#;
    let rd = ReputationData::from_json(rd_text).unwrap();
    assert_eq!(
        rd.rating(&PeerId::new("cafe").unwrap(), "espresso"),
        Some(RatingLevel::Master)
    );
    assert_eq!(ReputationData::from_json(&rd.to_json()).unwrap(), rd);
    // A rating with no interaction behind it is rejected.
    let no_ir = r#"{"owner": "a", "spr": [{"provider": "p", "rates": [{"sname": "s", "stype": "Food", "rate": "Master"}]}]}"#;
    assert!(ReputationData::from_json(no_ir).is_err());

    let psc_text = r#"[{"cid": "alice", "interactions": []}, {"cid": "bob", "interactions": []}]"#;
    let psc = PscList::from_json(PeerId::new("cafe").unwrap(), psc_text).unwrap();
    assert!(psc.contains(&PeerId::new("bob").unwrap()));
    assert_eq!(
        PscList::from_json(PeerId::new("cafe").unwrap(), &psc.to_json()).unwrap(),
        psc
    );
    assert!(PscList::from_json(
        PeerId::new("cafe").unwrap(),
        r#"[{"cid": "a", "interactions": []}, {"cid": "a", "interactions": []}]"#
    )
    .is_err());
}
