"""Regenerates the numpy reference files used by test_datakit."""
import numpy as np

rng = np.random.default_rng(5)
u8 = rng.integers(0, 256, size=(3, 4, 5), dtype=np.uint8)
f4 = rng.random((2, 6, 6), dtype=np.float32)
f8 = rng.random((4, 4))

np.save("u8_images.npy", u8)
np.save("f8_image.npy", f8)
np.save("f4_3x4.npy", np.arange(12, dtype="<f4").reshape(3, 4))
np.save("fortran.npy", np.asfortranarray(f8))
np.savez("stored.npz", train_images=u8, extra=f4)
np.savez_compressed("compressed.npz", train_images=u8)
# Expected values in plain text for the C++ side.
with open("expected.txt", "w") as fh:
    fh.write(" ".join(str(v) for v in u8.ravel()) + "\n")
    fh.write(" ".join(repr(float(v)) for v in f4.ravel()) + "\n")
    fh.write(" ".join(repr(float(v)) for v in f8.ravel()) + "\n")
