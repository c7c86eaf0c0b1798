"""Cross-modal hashing with an error-correcting neural decoder.

Subpackages cover the binary codec (gf2), the BPSK/AWGN channel model
(channel), sum-product belief propagation (bp), the trainable unrolled
decoder (neural_bp), the coupled hash encoders and their objective
(hashing), the staged training pipeline (pipeline), Hamming-ranking
retrieval metrics (retrieval), and synthetic data plus file formats
(data).  The command line lives in cli.
"""

__version__ = "0.1.0"
