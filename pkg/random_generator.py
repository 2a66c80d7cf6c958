import zlib

import numpy as np


class RandomGenerator:
    """
    Named random streams derived from one master seed

    ``child("ssl", "task", 3)`` always yields the same stream for the same
    master seed, independent of how many other streams were drawn before.
    """

    def __init__(self, seed: int, path: tuple = ()):
        if seed is None:
            raise ValueError("Seed is mandatory")
        self._seed = int(seed)
        self._path = tuple(path)
        self._generator: np.random.Generator | None = None

    def seed(self) -> int:
        return self._seed

    def path(self) -> tuple:
        return self._path

    def child(self, *names) -> "RandomGenerator":
        return RandomGenerator(self._seed, self._path + tuple(names))

    def spawn_key(self) -> tuple[int, ...]:
        return tuple(zlib.crc32(str(name).encode("utf-8")) for name in self._path)

    def derive_seed(self) -> int:
        """
        A 32-bit seed for APIs that only accept plain integers
        """
        return int(self.seed_sequence().generate_state(1)[0])

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=self._seed, spawn_key=self.spawn_key())

    def numpy(self) -> np.random.Generator:
        if self._generator is None:
            self._generator = np.random.default_rng(self.seed_sequence())
        return self._generator

    def next_int(self, maximum: int) -> int:
        return int(self.numpy().integers(0, maximum + 1))

    def __str__(self):
        return f"RandomGenerator(seed={self._seed}, path={'/'.join(map(str, self._path))})"
