use csdn::imageio::{list_images, quantize, read_dir_images, read_image, write_image};
use csdn::raster::Image;
use csdn::Error;

#[test]
fn pgm_and_png_round_trip_quantized_values() {
    let dir = tempfile::tempdir().unwrap();
    let img = Image::from_fn(7, 5, |y, x| ((y * 5 + x) as f64 * 0.031).min(1.2) - 0.05);
    for name in ["a.pgm", "b.png", "c.PNG"] {
        let path = dir.path().join(name);
        write_image(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!((back.height(), back.width()), (7, 5));
        for (&a, &b) in img.data().iter().zip(back.data()) {
            assert_eq!(quantize(a) as f64 / 255.0, b);
        }
    }
}

#[test]
fn directories_list_sorted_images_only() {
    let dir = tempfile::tempdir().unwrap();
    let img = Image::filled(4, 4, 0.5);
    for name in ["b.png", "a.pgm", "c.pgm"] {
        write_image(&img, dir.path().join(name)).unwrap();
    }
    std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
    let names: Vec<_> = list_images(dir.path())
        .unwrap()
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["a.pgm", "b.png", "c.pgm"]);
    assert_eq!(read_dir_images(dir.path()).unwrap()[1].0, "b");
}

#[test]
fn unreadable_inputs_report_their_path() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_dir_images(dir.path()), Err(Error::NoImages(_))));
    let bad = dir.path().join("bad.pgm");
    std::fs::write(&bad, b"P5 4 4 255\n\x01\x02").unwrap();
    match read_image(&bad) {
        Err(Error::Image { path, .. }) => assert_eq!(path, bad),
        other => panic!("{other:?}"),
    }
    assert!(write_image(&Image::filled(2, 2, 0.0), dir.path().join("x.bmp")).is_err());
}
