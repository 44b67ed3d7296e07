"""Affordance labels from depth, and direct affordance prediction from images.

Modules
    geometry        intrinsics, depth maps, back-projection, Manhattan frames
    voxels          gravity-aligned occupancy grids with free-space carving
    labeler         human-pose templates, convolution and tri-state labels
    hog             per-cell HOG and image pyramids
    midlevel        mid-level elements (detector + canonical form)
    grid_predictor  image to grid of logistic predictions
    evaluation      precision-recall, average precision, Jaccard threshold
    synthetic       box-and-plane rooms with an analytic affordance oracle
    io              file formats
    cli             command-line entry point
"""

__version__ = "0.1.0"
