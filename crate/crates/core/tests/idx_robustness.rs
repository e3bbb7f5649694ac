use bcmem::data::{
    encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels, IdxError,
    IMAGE_MAGIC, LABEL_MAGIC, PIXELS,
};

fn image_fixture() -> Vec<u8> {
    let pixels: Vec<u8> = (0..2 * PIXELS).map(|i| (i * 7 % 256) as u8).collect();
    encode_idx_images(2, &pixels)
}

/// Every single-byte change of the 16-byte image header is rejected, and the
/// error names the field that changed.
#[test]
fn image_header_mutations_rejected() {
    let valid = image_fixture();
    assert!(parse_idx_images(&valid).is_ok());
    let mut rejected = 0;
    for pos in 0..16 {
        for value in 0..=255u8 {
            if value == valid[pos] {
                continue;
            }
            let mut bytes = valid.clone();
            bytes[pos] = value;
            let err = parse_idx_images(&bytes).expect_err("mutation accepted");
            match pos {
                0..=3 => assert!(
                    matches!(err, IdxError::BadMagic { expected: IMAGE_MAGIC, .. }),
                    "byte {pos}: {err:?}"
                ),
                4..=7 => assert!(
                    matches!(err, IdxError::Truncated { .. } | IdxError::TrailingBytes { .. }),
                    "byte {pos}: {err:?}"
                ),
                _ => assert!(matches!(err, IdxError::BadDimensions { .. }), "byte {pos}: {err:?}"),
            }
            rejected += 1;
        }
    }
    assert_eq!(rejected, 16 * 255);
}

#[test]
fn label_header_mutations_rejected() {
    let valid = encode_idx_labels(&[3, 1, 4, 1, 5]);
    assert_eq!(parse_idx_labels(&valid).unwrap(), vec![3, 1, 4, 1, 5]);
    for pos in 0..8 {
        for value in 0..=255u8 {
            if value == valid[pos] {
                continue;
            }
            let mut bytes = valid.clone();
            bytes[pos] = value;
            let err = parse_idx_labels(&bytes).expect_err("mutation accepted");
            if pos < 4 {
                assert!(matches!(err, IdxError::BadMagic { expected: LABEL_MAGIC, .. }));
            } else {
                assert!(matches!(err, IdxError::Truncated { .. } | IdxError::TrailingBytes { .. }));
            }
        }
    }
}

#[test]
fn every_truncation_rejected() {
    let valid = image_fixture();
    for len in 0..valid.len() {
        assert!(parse_idx_images(&valid[..len]).is_err(), "length {len}");
    }
}
