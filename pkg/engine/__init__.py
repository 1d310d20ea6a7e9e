"""Engine module: generator, fitting, warm start and the block pipeline"""
