//! Writes a small label volume in the tensor format, reads it back, and
//! exports one slice as a PGM image.
//!
//!     cargo run --example tensor_io -- /tmp/pless-io

use pless::io::{self, Tensor, VolumeMeta};
use pless::LabelMap;

fn main() -> pless::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/pless-io".into());
    std::fs::create_dir_all(&dir).map_err(|e| pless::Error::io(&dir, e))?;
    let dir = std::path::Path::new(&dir);

    let meta = VolumeMeta::default();
    let slices: Vec<LabelMap> = (0..3)
        .map(|z| {
            let codes = (0..6 * 8)
                .map(|p| if p % 8 < 2 + z { 3 } else { 255 })
                .collect();
            LabelMap::from_codes(6, 8, codes, meta.num_classes(), meta.unlabeled_code)
        })
        .collect::<pless::Result<_>>()?;

    let tensor = io::labelmaps_to_tensor(&slices)?;
    let bytes = tensor.encode()?;
    println!(
        "dims {:?}, dtype {:?}, {} bytes on disk",
        tensor.dims(),
        tensor.dtype(),
        bytes.len()
    );

    io::write_tensor(dir.join("labels.plt"), &tensor)?;
    let back = io::labelmaps_from_tensor(&io::read_tensor(dir.join("labels.plt"))?, 4, 255)?;
    assert_eq!(back, slices);

    io::write_pgm(dir.join("slice0.pgm"), &back[0])?;
    let again = io::read_labelmap_image(dir.join("slice0.pgm"), &meta)?;
    println!(
        "slice 0 via PGM: {} of {} pixels labeled",
        again.labeled_count(),
        again.len()
    );

    meta.save(dir.join("meta.json"))?;
    println!(
        "meta: {}",
        std::fs::read_to_string(dir.join("meta.json")).unwrap_or_default()
    );

    match Tensor::decode(&bytes[..bytes.len() - 1]) {
        Err(e) => println!("truncated file is rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
