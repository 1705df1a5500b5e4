"""Repeated multiplication by a row-stochastic attention matrix strips high frequencies."""
import numpy as np

from hatfreq.spectral import attention_lowpass_decay, random_attention

n, k_max = 64, 50
rng = np.random.default_rng(0)
A = random_attention(n, rng)
v = rng.standard_normal(n)
ratios = attention_lowpass_decay(A, v, k_max)

print("k    high/low ratio of A^k v")
for k in (1, 2, 3, 5, 10, 20, 50):
    print(f"{k:<4} {ratios[k - 1]:.3e}")

# uniform attention averages everything in one step
print("uniform A, k=1:", attention_lowpass_decay(np.full((n, n), 1 / n), v, 1)[0])
