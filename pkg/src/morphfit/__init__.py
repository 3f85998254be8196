"""Morphable-model face fitting with eyeglass-region removal."""

from morphfit.errors import FitError, FormatError
from morphfit.model_core import (
    MorphableModel,
    ShapeCoeffs,
    TextureCoeffs,
    assemble_shape,
    assemble_texture,
    load_model,
    save_model,
    synth_model,
)
from morphfit.params import N_EXP, N_ID, N_PARAMS, N_SH, N_TEX, SceneParams

__all__ = [
    "FitError",
    "FormatError",
    "MorphableModel",
    "ShapeCoeffs",
    "TextureCoeffs",
    "SceneParams",
    "assemble_shape",
    "assemble_texture",
    "load_model",
    "save_model",
    "synth_model",
    "N_ID",
    "N_EXP",
    "N_TEX",
    "N_SH",
    "N_PARAMS",
]
