"""Click-trained two-stage neural retrieval."""
