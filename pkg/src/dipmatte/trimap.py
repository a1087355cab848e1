"""Trimap label planes and the region masks derived from them."""

from dataclasses import dataclass

import numpy as np

BACKGROUND = 0
UNKNOWN = 128
FOREGROUND = 255


@dataclass(frozen=True)
class TrimapMasks:
    fg: np.ndarray
    bg: np.ndarray
    unknown: np.ndarray

    def __post_init__(self):
        fg, bg, unknown = (np.asarray(m, dtype=bool) for m in (self.fg, self.bg, self.unknown))
        if not (fg.shape == bg.shape == unknown.shape) or fg.ndim != 2:
            raise ValueError("trimap masks must be 2-D planes of equal shape")
        total = fg.astype(np.int8) + bg + unknown
        if not np.all(total == 1):
            raise ValueError("trimap regions must be disjoint and cover the image")
        for name, m in (("fg", fg), ("bg", bg), ("unknown", unknown)):
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @classmethod
    def from_regions(cls, fg, bg):
        fg = np.asarray(fg, dtype=bool)
        bg = np.asarray(bg, dtype=bool)
        if np.any(fg & bg):
            raise ValueError("foreground and background regions overlap")
        return cls(fg, bg, ~(fg | bg))

    @classmethod
    def from_labels(cls, labels, low=64, high=191):
        """Band an 8-bit trimap: ``< low`` background, ``> high`` foreground, else unknown."""
        labels = np.asarray(labels)
        return cls.from_regions(labels > high, labels < low)

    @property
    def shape(self):
        return self.fg.shape

    @property
    def constrained(self):
        return self.fg | self.bg

    @property
    def target_alpha(self):
        """1 on F, 0 elsewhere; values on U carry no meaning."""
        return self.fg.astype(np.float32)

    def to_labels(self):
        labels = np.full(self.shape, UNKNOWN, dtype=np.uint8)
        labels[self.fg] = FOREGROUND
        labels[self.bg] = BACKGROUND
        return labels

    def counts(self):
        return {"fg": int(self.fg.sum()), "bg": int(self.bg.sum()), "unknown": int(self.unknown.sum())}
