# Artifact I/O and experiment logging
