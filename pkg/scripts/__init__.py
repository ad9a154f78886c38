# Scripts package for cclab commands
