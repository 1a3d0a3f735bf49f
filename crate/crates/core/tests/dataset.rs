use std::io::Write;

use proptest::prelude::*;
use tknn_core::dataset::{
    add_feature_noise, corruption_count, flip_labels, generate_gaussian_synthetic, load_csv, read_csv, CsvOptions,
    LabelColumn,
};

fn raw(label: &str) -> CsvOptions {
    CsvOptions {
        label_column: label.parse().unwrap(),
        l2_normalize: false,
        num_classes: None,
    }
}

#[test]
fn loads_a_file_with_header() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "a,b,label\n3,4,1\n0,2,0\n1,0,2").unwrap();
    let ds = load_csv(f.path(), &CsvOptions::default()).unwrap();
    assert_eq!((ds.len(), ds.dim(), ds.num_classes()), (3, 2, 3));
    assert_eq!(ds.features(0), &[0.6, 0.8]);
    assert_eq!(ds.labels(), &[1, 0, 2]);
}

#[test]
fn label_column_by_index_without_header() {
    let ds = read_csv("1,0.5,2\n0,1.5,-1\n".as_bytes(), &raw("0")).unwrap();
    assert_eq!(ds.labels(), &[1, 0]);
    assert_eq!(ds.features(1), &[1.5, -1.0]);
    let opts = CsvOptions { num_classes: Some(5), ..raw("0") };
    assert_eq!(read_csv("1,0.5\n".as_bytes(), &opts).unwrap().num_classes(), 5);
}

#[test]
fn malformed_input_is_reported() {
    let cases = [
        ("", "label"),
        ("a,b\n1,2\n", "label"),
        ("x,label\n1,0\n2\n", "label"),
        ("x,label\nfoo,1\n", "label"),
        ("x,label\n1,-1\n", "label"),
        ("x,label\n1,0.5\n", "label"),
        ("1,2\n", "7"),
    ];
    for (text, col) in cases {
        assert!(read_csv(text.as_bytes(), &raw(col)).is_err(), "{text:?}");
    }
    let zero = CsvOptions::default();
    assert!(read_csv("x,label\n0,1\n".as_bytes(), &zero).is_err());
    assert!(load_csv("/nonexistent/file.csv", &zero).is_err());
    assert_eq!("label".parse::<LabelColumn>().unwrap(), LabelColumn::Name("label".into()));
}

#[test]
fn corruption_is_seeded_and_exact() {
    let ds = generate_gaussian_synthetic(500, 4, 2).unwrap();
    let (a, rec) = flip_labels(&ds, 0.1, 7).unwrap();
    assert_eq!((a.clone(), rec.clone()), flip_labels(&ds, 0.1, 7).unwrap());
    assert_eq!(rec.indices.len(), corruption_count(0.1, 500));
    let mask = rec.mask(500);
    for i in 0..500 {
        assert_eq!(a.label(i) != ds.label(i), mask[i]);
        assert_eq!(a.features(i), ds.features(i));
    }
    let (b, rec) = add_feature_noise(&ds, 0.2, 7).unwrap();
    let mask = rec.mask(500);
    for i in 0..500 {
        assert_eq!(b.features(i) != ds.features(i), mask[i]);
        assert_eq!(b.label(i), ds.label(i));
    }
    assert!(flip_labels(&ds, 1.5, 0).is_err());
}

proptest! {
    #[test]
    fn written_rows_read_back(rows in prop::collection::vec((prop::collection::vec(-1e6f64..1e6, 3), 0usize..4), 1..30)) {
        let text: String = rows.iter().map(|(x, y)| format!("{},{},{},{y}\n", x[0], x[1], x[2])).collect();
        let ds = read_csv(text.as_bytes(), &raw("3")).unwrap();
        prop_assert_eq!(ds.len(), rows.len());
        for (i, (x, y)) in rows.iter().enumerate() {
            prop_assert_eq!(ds.features(i), &x[..]);
            prop_assert_eq!(ds.label(i), *y);
        }
    }
}
