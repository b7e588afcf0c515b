use serde_json::Value;
use v2v_web::{compare_mechanisms, simulate_day, solve_dense, DemoError};

const BOOK: &str = r#"[
  {"id": 1, "role": "buyer", "price": 0.40, "quantity": 8},
  {"id": 2, "role": "buyer", "price": 0.30, "quantity": 5},
  {"id": 3, "role": "seller", "price": 0.20, "quantity": 6},
  {"id": 4, "role": "seller", "price": 0.25, "quantity": 6},
  {"id": 5, "role": "neutral", "price": 0.30, "quantity": 3}
]"#;

#[test]
fn every_mechanism_reports_on_the_same_book() {
    let out: Vec<Value> = serde_json::from_str(&compare_mechanisms(BOOK, 7).unwrap()).unwrap();
    let names: Vec<&str> = out.iter().map(|o| o["mechanism"].as_str().unwrap()).collect();
    assert_eq!(names, ["nash", "greedy_avg", "double_auction", "learning_only"]);
    for o in &out {
        assert_eq!(o["utilities"].as_array().unwrap().len(), 5);
        assert!(o["metrics"]["sw"].as_f64().unwrap() > 0.0);
        for t in o["trades"].as_array().unwrap() {
            let p = t["price"].as_f64().unwrap();
            assert!((0.20..=0.40).contains(&p));
        }
    }
    // nash lets every active agent trade on this book
    assert_eq!(out[0]["metrics"]["p_match"].as_f64().unwrap(), 1.0);
}

#[test]
fn comparison_is_seeded() {
    assert_eq!(compare_mechanisms(BOOK, 3).unwrap(), compare_mechanisms(BOOK, 3).unwrap());
}

#[test]
fn single_pair_allocation_fills_the_smaller_cap() {
    let out: Value = serde_json::from_str(
        &solve_dense(r#"{"buyer_caps": [10], "seller_caps": [6], "surplus": [[0.1]]}"#).unwrap(),
    )
    .unwrap();
    let x = out["flows"][0][0].as_f64().unwrap();
    assert!((x - 6.0).abs() < 1e-6, "{x}");
    assert!((out["buyer_utils"][0].as_f64().unwrap() - 0.3).abs() < 1e-6);
}

#[test]
fn allocation_input_is_checked() {
    assert!(matches!(
        solve_dense(r#"{"buyer_caps": [1, 2], "seller_caps": [1], "surplus": [[0.1]]}"#),
        Err(DemoError::Input(_))
    ));
    assert!(matches!(
        solve_dense(r#"{"buyer_caps": [1], "seller_caps": [1], "surplus": [[null]]}"#),
        Err(DemoError::Optim(_))
    ));
    assert!(matches!(solve_dense("nope"), Err(DemoError::Json(_))));
}

#[test]
fn a_day_has_one_row_per_step() {
    let rows: Vec<Value> = serde_json::from_str(&simulate_day(10, "nash", 1).unwrap()).unwrap();
    assert_eq!(rows.len(), 16);
    assert!(rows.iter().all(|r| r["sw"].as_f64().unwrap().is_finite()));
    assert!(simulate_day(10, "barter", 1).is_err());
    assert!(simulate_day(0, "nash", 1).is_err());
}
