"""Tour of the label container and the ODR1 record file format.

Synthesizes label records, packs them into a sparse batch and back,
streams them through the binary file format, and shows what the reader
reports when the file is damaged. Finishes with the deterministic jitter
and mirror augmentation.

Run: python3 demos/record_format.py
"""

import tempfile
from pathlib import Path

import numpy as np

from odkit import (
    RecordCorruptionError,
    RecordFormatError,
    augment_jitter,
    decode_batch,
    encode_batch,
    gen_synthetic,
    read_records,
    write_records,
)


def main():
    records = gen_synthetic(seed=7, n_images=5, max_boxes=4,
                            image_w=640, image_h=480)
    print("synthetic records:")
    for rec in records:
        print(f"  image {rec.image_id}: {rec.image_w}x{rec.image_h}, "
              f"{len(rec.boxes)} boxes, classes {rec.classes.tolist()}")
    print()

    # Sparse batch form: one (image, ordinal) index row per box, so
    # images with different box counts share one flat array pair.
    batch = encode_batch(records)
    print(f"sparse batch: batch_size={batch.batch_size}, "
          f"rois_idx {batch.rois_idx.shape}, rois_values {batch.rois_values.shape}")
    decoded = decode_batch(batch)
    assert all(np.array_equal(boxes, rec.boxes) for (boxes, _), rec
               in zip(decoded, records))
    print("encode_batch -> decode_batch is lossless\n")

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "labels.odr"
        write_records(path, records)
        size = path.stat().st_size
        n_boxes = sum(len(r.boxes) for r in records)
        # 4-byte magic, then per record: u32 length + 14-byte header
        # + 18 bytes per box.
        expected = 4 + sum(4 + 14 + 18 * len(r.boxes) for r in records)
        print(f"wrote {len(records)} records ({n_boxes} boxes) "
              f"in {size} bytes (layout predicts {expected})")
        back = list(read_records(path))
        assert back == records
        print("write_records -> read_records is lossless\n")

        raw = path.read_bytes()
        bad_magic = Path(tmp) / "bad_magic.odr"
        bad_magic.write_bytes(b"JUNK" + raw[4:])
        try:
            list(read_records(bad_magic))
        except RecordFormatError as e:
            print(f"wrong magic      -> RecordFormatError: {e}")
        truncated = Path(tmp) / "truncated.odr"
        truncated.write_bytes(raw[:-9])
        try:
            list(read_records(truncated))
        except RecordCorruptionError as e:
            print(f"truncated file   -> RecordCorruptionError: {e}")
    print()

    # Augmentation is pure: same record + same seed = same output.
    rec = records[0]
    jittered = augment_jitter(rec, seed=3, max_drift=5, allow_flip=True)
    again = augment_jitter(rec, seed=3, max_drift=5, allow_flip=True)
    assert jittered == again
    print("jitter with seed 3, max_drift 5, flips allowed:")
    for before, after in zip(rec.boxes, jittered.boxes):
        print(f"  {before.tolist()} -> {after.tolist()}")


if __name__ == "__main__":
    main()
