"""
Dual attention multi-slice lesion detection
~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~

sliceattn is a small, fully differentiable (2+1)D lesion detector for stacks of image slices.
Neighbouring slices are grouped into 3-channel images; a shared backbone extracts features from
every image, a contextual attention module reweights them across the images and a spatial
attention module reweights the positions within each image.  The refined features are
concatenated and fed to a region proposal network and a position-sensitive ROI pooling head.

Everything runs on numpy with a built-in reverse-mode automatic differentiation engine, so the
package needs no deep learning framework.  Synthetic phantom volumes with known lesions are used
for training and for free-response ROC evaluation.

Overview
~~~~~~~~

    * tensorcore: Tensor with reverse-mode autodiff, the operations the pipeline needs and a
      finite difference gradient checker
    * attention: contextual and spatial attention
    * detection: backbone, region proposals, PSROI pooling head, losses
    * synthdata: phantom generator, volume and annotation files, strata
    * training: SGD with momentum and the training loop
    * evaluation: detection matching, FROC, report files and overlays

Command-line interface usage
~~~~~~~~~~~~~~~~~~~~~~~~~~~~

For using sliceattn as a CLI, see help.md

Library usage
~~~~~~~~~~~~~

sliceattn can be used as a library using its backend API.  For example:

.. code-block:: python

    # Setup logging - sliceattn uses the Python logging module
    import logging
    logging.basicConfig(format="%(levelname)s: %(message)s", level=logging.INFO)

    from sliceattn.backend import Backend
    from sliceattn.configfile import load_run_config

    run_config = load_run_config([])
    backend = Backend(run_config)

    # Synthesize a training set, train, then evaluate on a held-out set
    backend.generate(200, "data/train")
    backend.generate(50, "data/test", start=200)
    result = backend.train("data/train", "runs/both")
    report = backend.evaluate(result.detector, "data/test", "runs/both/eval")
    print(report.sensitivity_at)

Logging
~~~~~~~
This package uses the Python logging module for publishing log messages to library users.
A basic configuration can be used (see example).  See logging.yaml which is included in the
package (although only used for CLI)
"""

import logging
logging.getLogger(__name__).addHandler(logging.NullHandler())

__version__ = '1.0.0'

# Filled in by the release build
COMMIT_ID = 'N/A'
BUILD_DATE = 'N/A'
