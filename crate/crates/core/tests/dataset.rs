use std::path::Path;

use bathcls::dataset::{
    load_image, load_manifest, load_split, make_batches, manifest_from_dir, stats, DatasetError, Label, Split,
};
use image::{Rgb, RgbImage};

fn write_png(path: &Path, w: u32, h: u32, value: u8) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    RgbImage::from_pixel(w, h, Rgb([value, value / 2, 255 - value]))
        .save(path)
        .unwrap();
}

fn tree(root: &Path) {
    write_png(&root.join("train/good/a.png"), 10, 7, 200);
    write_png(&root.join("train/good/b.PNG"), 4, 4, 180);
    write_png(&root.join("train/bad/c.png"), 9, 9, 30);
    write_png(&root.join("Test/Good/d.png"), 5, 12, 220);
    write_png(&root.join("test/bad/e.jpeg"), 6, 6, 10);
    std::fs::write(root.join("train/good/notes.txt"), "ignored").unwrap();
    std::fs::create_dir_all(root.join("valid/good")).unwrap();
}

#[test]
fn manifest_from_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    tree(dir.path());
    let m = manifest_from_dir(dir.path()).unwrap();
    let paths: Vec<&str> = m.records.iter().map(|r| r.path.as_str()).collect();
    assert_eq!(
        paths,
        [
            "Test/Good/d.png",
            "test/bad/e.jpeg",
            "train/bad/c.png",
            "train/good/a.png",
            "train/good/b.PNG"
        ]
    );
    let s = stats(&m);
    assert_eq!((s.train_good, s.train_bad, s.test_good, s.test_bad), (2, 1, 1, 1));

    let csv = dir.path().join("manifest.csv");
    m.write_csv(&csv).unwrap();
    assert_eq!(load_manifest(&csv).unwrap(), m);
}

#[test]
fn splits_are_disjoint_by_path() {
    let dir = tempfile::tempdir().unwrap();
    tree(dir.path());
    let m = manifest_from_dir(dir.path()).unwrap();
    let train: Vec<&str> = m.split(Split::Train).map(|r| r.path.as_str()).collect();
    assert!(m.split(Split::Test).all(|r| !train.contains(&r.path.as_str())));
}

#[test]
fn load_split_decodes_and_resizes() {
    let dir = tempfile::tempdir().unwrap();
    tree(dir.path());
    let m = manifest_from_dir(dir.path()).unwrap();
    let train = load_split(&m, dir.path(), Split::Train, 8).unwrap();
    assert_eq!(train.len(), 3);
    for (s, r) in train.iter().zip(m.split(Split::Train)) {
        assert_eq!(s.image.shape(), &[8, 8, 3]);
        assert_eq!(s.label, r.label.target());
        assert!(s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
    // uniform source images stay uniform after resizing
    let first = &train[0];
    assert_eq!(m.split(Split::Train).next().unwrap().label, Label::Bad);
    assert!((first.image.data()[0] - 30.0 / 255.0).abs() < 1e-6);
    assert!((first.image.data()[2] - 225.0 / 255.0).abs() < 1e-6);

    let again = load_split(&m, dir.path(), Split::Train, 8).unwrap();
    assert_eq!(train, again);
}

#[test]
fn missing_image_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    tree(dir.path());
    let m = manifest_from_dir(dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("test/bad/e.jpeg")).unwrap();
    match load_split(&m, dir.path(), Split::Test, 4) {
        Err(DatasetError::Io { path, .. }) | Err(DatasetError::Decode { path, .. }) => {
            assert!(path.ends_with("e.jpeg"), "{path}")
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn load_image_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.png");
    let mut img = RgbImage::new(13, 5);
    for (x, y, px) in img.enumerate_pixels_mut() {
        *px = Rgb([(x * 19) as u8, (y * 50) as u8, ((x + y) * 7) as u8]);
    }
    img.save(&p).unwrap();
    assert_eq!(load_image(&p, 6).unwrap(), load_image(&p, 6).unwrap());
}

#[test]
fn batch_order_depends_only_on_seed() {
    let items: Vec<u32> = (0..23).collect();
    let a = make_batches(&items, 5, 3, true).unwrap();
    assert_eq!(a, make_batches(&items, 5, 3, true).unwrap());
    assert_ne!(a, make_batches(&items, 5, 4, true).unwrap());
    assert_eq!(a.iter().map(Vec::len).collect::<Vec<_>>(), [5, 5, 5, 5, 3]);
}
