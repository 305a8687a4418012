"""Init file for worker module: task dispatch and the process-pool runners."""
