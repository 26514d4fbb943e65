"""Where the adapted and fibered distances part ways.

Both compare measures on (x, omega) space. The fibered distance matches fibres
with the same omega, while the adapted distance may pair fibres with nearby
omega when that is cheaper. With crossed fibres the gap is large.
"""
import numpy as np

from dnarlab import FiberedMeasure, adapted_w2, fibered_w2

omega = np.array([[0.0], [0.001]])
A = FiberedMeasure.from_atoms(np.array([[0.0], [10.0]]), omega)
B = FiberedMeasure.from_atoms(np.array([[10.0], [0.0]]), omega)
print(f"crossed fibres: fibered {fibered_w2(A, B):.4f}, adapted {adapted_w2(A, B):.4f}")

C = FiberedMeasure.from_atoms(np.array([[0.5], [10.5]]), omega)
print(f"parallel fibres: fibered {fibered_w2(A, C):.4f}, adapted {adapted_w2(A, C):.4f}")
