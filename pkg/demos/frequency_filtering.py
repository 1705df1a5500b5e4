"""Low- and high-pass filtering of a 1/f image, and how much energy each band holds."""
import numpy as np

from hatfreq.data import synthetic_dataset
from hatfreq.spectral import filter_image, highfreq_energy_ratio, make_mask


def show(mask):
    for row in mask.grid:
        print("  " + "".join("#" if v else "." for v in row))


print("as-written low-pass, 8x8, S=4 (a cross):")
show(make_mask(8, 8, 4, "low"))
print("square low-pass, 8x8, S=4:")
show(make_mask(8, 8, 4, "low", "square"))
print("high-pass, 8x8, S=4:")
show(make_mask(8, 8, 4, "high"))

data = synthetic_dataset(8, seed=0, image_size=32)
image = data.destandardize(data.images[:1])[0]
print("\nS   low-pass kept energy   high-pass kept energy")
total = np.sum(image ** 2)
for S in (4, 8, 16, 24):
    low = filter_image(image, make_mask(32, 32, S, "low"))
    high = filter_image(image, make_mask(32, 32, S, "high"))
    print(f"{S:<3} {np.sum(low ** 2) / total:>20.4f} {np.sum(high ** 2) / total:>23.4f}")

noise = np.random.default_rng(0).standard_normal(image.shape)
print(f"\nhigh-frequency energy ratio at S=8: image {highfreq_energy_ratio(image, 8):.4f}, "
      f"white noise {highfreq_energy_ratio(noise, 8):.4f}")
