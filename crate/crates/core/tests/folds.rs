use mclnn::datasets::{fold_split, parse_manifest};
use proptest::prelude::*;

proptest! {
    #[test]
    fn rotation_partitions_folds(f in 3usize..20, t in 1usize..20) {
        prop_assume!(t <= f);
        let split = fold_split(f, t).unwrap();
        let mut all = split.train.clone();
        all.push(split.validation);
        all.push(split.test);
        all.sort();
        prop_assert_eq!(all, (1..=f).collect::<Vec<_>>());
        prop_assert_eq!(split.train.len(), f - 2);
    }
}

#[test]
fn manifest_columns_in_any_order() {
    let m = parse_manifest(b"label,path,fold\ndog,a.wav,1\ncat,b.wav,2\ndog,c.wav,3\n").unwrap();
    assert_eq!(m.classes, vec!["cat", "dog"]);
    assert_eq!(m.entries[1].path, "b.wav");
    assert_eq!(m.class_counts(), vec![1, 2]);
}

#[test]
fn confusion_rows_match_manifest_counts() {
    use mclnn::datasets::ReportBuilder;
    let m = parse_manifest(b"path,fold,label\na,1,x\nb,2,y\nc,3,y\nd,3,x\ne,2,y\n").unwrap();
    let mut builder = ReportBuilder::new(m.classes.clone());
    for fold in 1..=3 {
        let preds: Vec<(usize, usize)> = m
            .entries
            .iter()
            .filter(|e| e.fold == fold)
            .map(|e| (m.class_index(&e.label).unwrap(), 0))
            .collect();
        builder.add_fold(fold, &preds).unwrap();
    }
    let report = builder.finish();
    let rows: Vec<usize> = report.confusion.iter().map(|r| r.iter().sum()).collect();
    assert_eq!(rows, m.class_counts());
}
