use shda_bench::{noise_task, random_symmetric};

#[test]
fn symmetric_fixture_is_symmetric() {
    let a = random_symmetric(7, 1);
    assert_eq!(a.shape(), (7, 7));
    assert_eq!(a.asymmetry(), 0.0);
    assert_eq!(random_symmetric(7, 1), a);
}

#[test]
fn noise_task_shapes() {
    let (noise, split) = noise_task(16, 5, 2);
    assert_eq!((noise.len(), noise.dim()), (20, 16));
    assert_eq!(split.labeled.class_counts(), vec![3; 4]);
    assert_eq!(split.unlabeled.rows(), 4 * 200);
    assert_eq!(split.dim(), 50);
}
