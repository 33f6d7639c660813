"""
Seeded CT-like phantom volumes with multi-slice lesions

Every sample is a volume of 3M slices with the key slice in the middle.  The background is an
elliptical body with low-frequency texture; one lesion, an axis-aligned Gaussian bump centred on
the key slice, fades linearly over lesion_slice_span consecutive slices; distractors are similar
bumps whose slice span never includes the key slice; Gaussian noise goes on top and intensities
are clipped to [0, 1].

A sample depends only on (spec, index): the generator of sample i is
numpy.random.default_rng([seed, i]), so any index range can be produced independently.
"""
import math
from collections import namedtuple
from dataclasses import dataclass
from logging import getLogger

import numpy as np
from scipy.ndimage import gaussian_filter

from ..sliceattn_errors import SliceattnSpecError
from ..detection.boxes import Box
from ..detection.model import SliceDeck, SLICES_PER_IMAGE

# Full width at half maximum of a Gaussian is FWHM_PER_SIGMA * sigma
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
BODY_INTENSITY = 0.3
BODY_SEMI_AXIS = 0.45
TEXTURE_AMPLITUDE = 0.03
TEXTURE_SIGMA = (1.5, 4.0, 4.0)
LESION_AMPLITUDE = (0.35, 0.5)
LESION_ASPECT = (0.75, 1.0)
# Lesion centres stay within this fraction of the image size around the image centre
CENTRE_SPREAD = 0.25

@dataclass
class PhantomSpec:
    """
    Phantom generation settings; ranges are (low, high) inclusive
    """
    image_size: int = 64
    num_images: int = 3
    lesion_diameter_px: tuple = (4.0, 24.0)
    lesion_slice_span: tuple = (1, 3)
    distractor_count: tuple = (2, 4)
    noise_sigma: float = 0.02
    slice_interval_mm: tuple = (1.0, 5.0)
    seed: int = 1

    def __post_init__(self):
        self.lesion_diameter_px = tuple(float(value) for value in self.lesion_diameter_px)
        self.lesion_slice_span = tuple(int(value) for value in self.lesion_slice_span)
        self.distractor_count = tuple(int(value) for value in self.distractor_count)
        self.slice_interval_mm = tuple(float(value) for value in self.slice_interval_mm)
        for name in ('lesion_diameter_px', 'lesion_slice_span', 'distractor_count', 'slice_interval_mm'):
            low, high = getattr(self, name)
            if low > high:
                raise SliceattnSpecError("{} range ({}, {}) is empty".format(name, low, high))
        if self.image_size < 8:
            raise SliceattnSpecError("image_size must be at least 8 px, got {}".format(self.image_size))
        if self.num_images < 1 or self.num_images % 2 == 0:
            raise SliceattnSpecError("num_images must be a positive odd integer, got {}".format(self.num_images))
        if self.lesion_diameter_px[0] < 2.0:
            raise SliceattnSpecError("Lesion diameters must be at least 2 px, got {}".format(self.lesion_diameter_px[0]))
        if self.lesion_diameter_px[1] > self.image_size - 2:
            raise SliceattnSpecError("Lesion diameter {} px does not fit a {} px image".format(
                self.lesion_diameter_px[1], self.image_size))
        if self.lesion_slice_span[0] < 1 or self.distractor_count[0] < 0:
            raise SliceattnSpecError("Slice spans must be at least 1 and distractor counts non-negative")
        if self.slice_interval_mm[0] <= 0.0 or self.noise_sigma < 0.0:
            raise SliceattnSpecError("Slice intervals must be positive and noise_sigma non-negative")

    @property
    def slice_count(self):
        """
        Slices per volume, 3M
        """
        return SLICES_PER_IMAGE * self.num_images

    @property
    def key_slice(self):
        """
        Index of the key slice, (3M - 1) / 2
        """
        return (self.slice_count - 1) // 2

@dataclass
class Sample:
    """
    One generated volume with its key slice annotation
    """
    deck: SliceDeck
    ground_truth: list
    diameter: float
    slice_span: int
    slice_interval_mm: float
    volume_id: str

PhantomLayers = namedtuple('PhantomLayers', 'background lesion distractors noise')
Blob = namedtuple('Blob', 'centre_x centre_y diameter aspect amplitude first_slice last_slice peak_slice')

def volume_id(index):
    """
    Identifier of sample index, also the stem of its volume file
    """
    return "vol_{:05d}".format(index)

def span_offsets(span):
    """
    Slice offsets from the lesion centre covered by span consecutive slices

    Odd spans are symmetric; even spans extend one slice further after the centre.
    """
    return -((span - 1) // 2), span // 2

def slice_profile(slice_count, peak_slice, first_slice, last_slice):
    """
    Per-slice intensity factors of a blob: 1 on its peak slice, falling linearly towards the ends of
    its span and 0 outside [first_slice, last_slice]
    """
    reach = max(peak_slice - first_slice, last_slice - peak_slice) + 1
    profile = np.zeros(slice_count)
    for index in range(max(first_slice, 0), min(last_slice, slice_count - 1) + 1):
        profile[index] = 1.0 - abs(index - peak_slice) / reach
    return profile

def gaussian_bump(image_size, blob):
    """
    Unit-peak bump of a blob on the pixel grid, evaluated at pixel centres

    The full width at half maximum is the blob diameter along x and diameter * aspect along y.
    """
    centres = np.arange(image_size) + 0.5
    sigma_x = blob.diameter / FWHM_PER_SIGMA
    sigma_y = blob.diameter * blob.aspect / FWHM_PER_SIGMA
    profile_x = np.exp(-0.5 * ((centres - blob.centre_x) / sigma_x) ** 2)
    profile_y = np.exp(-0.5 * ((centres - blob.centre_y) / sigma_y) ** 2)
    return profile_y[:, np.newaxis] * profile_x[np.newaxis, :]

def render_blob(spec, blob):
    """
    Blob as a [S, H, W] intensity volume
    """
    profile = slice_profile(spec.slice_count, blob.peak_slice, blob.first_slice, blob.last_slice)
    return blob.amplitude * profile[:, np.newaxis, np.newaxis] * gaussian_bump(spec.image_size, blob)[np.newaxis]

def half_maximum_box(image_size, blob):
    """
    Tight half-open box around the pixels where the blob's key slice bump reaches half its peak
    """
    rows, columns = np.nonzero(gaussian_bump(image_size, blob) >= 0.5)
    return Box(float(columns.min()), float(rows.min()), float(columns.max() + 1), float(rows.max() + 1))

def _draw_centre(rng, spec, diameter):
    low = max(spec.image_size * (0.5 - CENTRE_SPREAD), 0.5 * diameter + 1.0)
    high = min(spec.image_size * (0.5 + CENTRE_SPREAD), spec.image_size - 0.5 * diameter - 1.0)
    if low > high:
        low = high = 0.5 * spec.image_size
    return rng.uniform(low, high), rng.uniform(low, high)

def _draw_shape(rng, spec):
    diameter = rng.uniform(*spec.lesion_diameter_px)
    centre_x, centre_y = _draw_centre(rng, spec, diameter)
    return centre_x, centre_y, diameter, rng.uniform(*LESION_ASPECT), rng.uniform(*LESION_AMPLITUDE)

def draw_lesion(rng, spec):
    """
    Lesion blob centred on the key slice
    """
    centre_x, centre_y, diameter, aspect, amplitude = _draw_shape(rng, spec)
    span = int(rng.integers(spec.lesion_slice_span[0], spec.lesion_slice_span[1] + 1))
    before, after = span_offsets(span)
    key = spec.key_slice
    return Blob(centre_x, centre_y, diameter, aspect, amplitude, key + before, key + after, key)

def draw_distractor(rng, spec):
    """
    Lesion-like blob whose slices all lie on one side of the key slice
    """
    centre_x, centre_y, diameter, aspect, amplitude = _draw_shape(rng, spec)
    span = int(rng.integers(spec.lesion_slice_span[0], spec.lesion_slice_span[1] + 1))
    side = 1 if rng.random() < 0.5 else -1
    gap = int(rng.integers(1, spec.key_slice + 1)) if spec.key_slice > 0 else 1
    near = spec.key_slice + side * gap
    far = near + side * (span - 1)
    first, last = min(near, far), max(near, far)
    return Blob(centre_x, centre_y, diameter, aspect, amplitude, first, last, near + side * ((span - 1) // 2))

def body_background(rng, spec):
    """
    Elliptical body with smooth texture, constant zero outside the body
    """
    size = spec.image_size
    centres = (np.arange(size) + 0.5) / size - 0.5
    semi_y = BODY_SEMI_AXIS * rng.uniform(0.9, 1.0)
    semi_x = BODY_SEMI_AXIS * rng.uniform(0.9, 1.0)
    body = ((centres[:, np.newaxis] / semi_y) ** 2 + (centres[np.newaxis, :] / semi_x) ** 2) <= 1.0
    texture = gaussian_filter(rng.standard_normal((spec.slice_count, size, size)), TEXTURE_SIGMA, mode='nearest')
    spread = texture.std()
    texture = texture / spread if spread > 0.0 else texture
    return body[np.newaxis] * (BODY_INTENSITY + TEXTURE_AMPLITUDE * texture)

def generate_layers(spec, index):
    """
    The separate intensity layers of sample index

    :returns: tuple (PhantomLayers of [S, H, W] arrays, lesion Blob, list of distractor Blobs,
        slice interval in mm)
    """
    rng = np.random.default_rng([spec.seed, index])
    lesion = draw_lesion(rng, spec)
    count = int(rng.integers(spec.distractor_count[0], spec.distractor_count[1] + 1))
    distractors = [draw_distractor(rng, spec) for _ in range(count)]
    interval = float(rng.uniform(*spec.slice_interval_mm))
    shape = (spec.slice_count, spec.image_size, spec.image_size)
    background = body_background(rng, spec)
    noise = rng.normal(0.0, spec.noise_sigma, size=shape) if spec.noise_sigma > 0.0 else np.zeros(shape)
    distractor_layer = np.zeros(shape)
    for blob in distractors:
        distractor_layer += render_blob(spec, blob)
    layers = PhantomLayers(background, render_blob(spec, lesion), distractor_layer, noise)
    return layers, lesion, distractors, interval

def generate_sample(spec, index):
    """
    Sample number index of the stream described by spec

    :param spec: PhantomSpec
    :param index: non-negative sample index
    :returns: Sample
    """
    layers, lesion, _, interval = generate_layers(spec, index)
    volume = np.clip(layers.background + layers.lesion + layers.distractors + layers.noise, 0.0, 1.0)
    identifier = volume_id(index)
    deck = SliceDeck(volume, spec.key_slice, interval, identifier)
    return Sample(deck, [half_maximum_box(spec.image_size, lesion)], lesion.diameter,
                  lesion.last_slice - lesion.first_slice + 1, interval, identifier)

def generate(spec, count, start=0):
    """
    Stream of count samples with indices start, start + 1, ...

    :param spec: PhantomSpec
    :param count: number of samples, at least 1
    :returns: generator of Sample
    :raises SliceattnSpecError: if count is below 1
    """
    if count < 1:
        raise SliceattnSpecError("Sample count must be at least 1, got {}".format(count))
    logger = getLogger(__name__)
    logger.debug("Generating %d phantoms from index %d with seed %d", count, start, spec.seed)
    return (generate_sample(spec, index) for index in range(start, start + count))
