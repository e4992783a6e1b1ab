"""Speech recovery from millimeter-wave radar vibration traces.

Library layout:
    dsp       -- resampling, STFT/iSTFT, Mel analysis/inversion, Griffin-Lim, file formats
    simulate  -- radar forward model and paired-corpus builder
    tensor    -- reverse-mode autograd on dense numpy arrays
    nn        -- neural-net ops (conv, attention, ...), parameters, SGD, checkpoints
    model     -- the recovery network (UNet + Transformer bottleneck + FTL), train/infer
    metrics   -- LSD, STOI, evaluation report
    plots     -- Mel heatmaps and loss-curve figures
    config    -- documented run-configuration schema
    cli       -- `radarspeech` command-line entry point
"""

__version__ = "0.1.0"
